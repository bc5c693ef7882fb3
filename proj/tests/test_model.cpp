#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "helpers.hpp"
#include "voxkit/model.hpp"

using namespace voxkit;

namespace {

// Closed-form parameter count, written independently of the library walk:
// each conv unit has f_out*(27*f_in + 1) conv parameters plus 2*f_out batch
// norm parameters; the head has fc_in*classes weights plus classes biases.
std::size_t expected_parameter_count(int depth, int nx, int ny, int nz) {
  const auto ins = round_robin_insertions(depth);
  std::size_t total = 0;
  int in_ch = 1;
  int dims[3] = {nx, ny, nz};
  const int pools[4] = {4, 3, 2, 2};
  for (int block = 0; block < 4; ++block) {
    const int f = 8 * (block + 1);
    for (int u = 0; u < 1 + ins[block]; ++u) {
      total += static_cast<std::size_t>(f) * (27u * in_ch + 1u) + 2u * f;
      in_ch = f;
    }
    for (int a = 0; a < 3; ++a) dims[a] = std::max(1, dims[a] / pools[block]);
  }
  const std::size_t fc_in = static_cast<std::size_t>(32) * dims[0] * dims[1] * dims[2];
  return total + fc_in * 2 + 2;
}

}  // namespace

TEST_CASE("round-robin insertion schedule", "[model]") {
  REQUIRE(round_robin_insertions(4) == std::array<int, 4>{0, 0, 0, 0});
  REQUIRE(round_robin_insertions(6) == std::array<int, 4>{1, 1, 0, 0});
  REQUIRE(round_robin_insertions(8) == std::array<int, 4>{1, 1, 1, 1});
  REQUIRE(round_robin_insertions(10) == std::array<int, 4>{2, 2, 1, 1});
  REQUIRE(round_robin_insertions(12) == std::array<int, 4>{2, 2, 2, 2});
}

TEST_CASE("architecture validation", "[model]") {
  REQUIRE_THROWS_AS(make_arch_spec(5), InvalidSpec);
  REQUIRE_THROWS_AS(make_arch_spec(0), InvalidSpec);
  REQUIRE_THROWS_AS(make_arch_spec(4, 0.7), InvalidSpec);
  REQUIRE_THROWS_AS(make_arch_spec(4, -0.1), InvalidSpec);
  auto spec = make_arch_spec(8);
  spec.insertion_counts = {4, 0, 0, 0};  // right sum, wrong schedule
  REQUIRE_THROWS_AS(validate_arch(spec), InvalidSpec);
  spec = make_arch_spec(8);
  spec.num_classes = 3;
  REQUIRE_THROWS_AS(validate_arch(spec), InvalidSpec);
  spec = make_arch_spec(8);
  spec.input_nz = 0;
  REQUIRE_THROWS_AS(validate_arch(spec), InvalidSpec);
}

TEST_CASE("pooled shape chain at full input size", "[model]") {
  const auto spec = make_arch_spec(4);  // 96 x 96 x 73 default
  REQUIRE(pooled_dims_after(spec, 0) == std::array<int, 3>{96, 96, 73});
  REQUIRE(pooled_dims_after(spec, 1) == std::array<int, 3>{24, 24, 18});
  REQUIRE(pooled_dims_after(spec, 2) == std::array<int, 3>{8, 8, 6});
  REQUIRE(pooled_dims_after(spec, 3) == std::array<int, 3>{4, 4, 3});
  REQUIRE(pooled_dims_after(spec, 4) == std::array<int, 3>{2, 2, 1});
  REQUIRE(fc_input_length(spec) == 32 * 2 * 2 * 1);
}

TEST_CASE("conv stack parameter counts match the published sizes", "[model]") {
  REQUIRE(conv_stack_parameter_count({32, 64}) == 56256u);
  REQUIRE(conv_stack_parameter_count({8, 16}) == 3696u);
  REQUIRE(conv_stack_parameter_count({}) == 0u);
}

TEST_CASE("every depth builds, runs and grows in parameters", "[model]") {
  SeededRng rng(30);
  std::size_t prev = 0;
  for (int depth : {4, 6, 8, 10, 12}) {
    const auto spec = make_arch_spec(depth, 0.0, 16, 16, 12);
    auto model = build_model<float>(spec, rng);
    REQUIRE(static_cast<int>(model.units.size()) == depth);
    const std::size_t count = count_parameters(model);
    REQUIRE(count == expected_parameter_count(depth, 16, 16, 12));
    REQUIRE(count > prev);
    prev = count;

    Batch5D<float> x(2, 1, 16, 16, 12);
    testutil::fill_uniform(x.data, rng, 0.0f, 1.0f);
    const auto out = forward(model, x, Mode::Train, nullptr,
                             static_cast<ForwardCache<float>*>(nullptr), true);
    REQUIRE(out.logits.rows == 2);
    REQUIRE(out.logits.cols == 2);
    for (float v : out.logits.data) REQUIRE(std::isfinite(v));
    REQUIRE(static_cast<int>(out.embeddings.size()) == depth);
  }
}

TEST_CASE("an empty model has zero parameters", "[model]") {
  Model<float> empty;
  REQUIRE(count_parameters(empty) == 0u);
  REQUIRE(count_conv_parameters(empty) == 0u);
}

TEST_CASE("building is deterministic in the seed", "[model]") {
  const auto spec = make_arch_spec(6, 0.0, 12, 12, 9);
  SeededRng a(77), b(77), c(78);
  const auto ma = build_model<float>(spec, a);
  const auto mb = build_model<float>(spec, b);
  const auto mc = build_model<float>(spec, c);
  REQUIRE(ma.units[0].conv.w == mb.units[0].conv.w);
  REQUIRE(ma.fc.w == mb.fc.w);
  REQUIRE(ma.units[0].conv.w != mc.units[0].conv.w);
  for (const auto& u : ma.units) {
    for (float v : u.conv.b) REQUIRE(v == 0.0f);
    for (float v : u.bn.gamma) REQUIRE(v == 1.0f);
    for (float v : u.bn.beta) REQUIRE(v == 0.0f);
  }
}

TEST_CASE("forward rejects mismatched inputs", "[model]") {
  SeededRng rng(31);
  auto model = build_model<float>(make_arch_spec(4, 0.0, 8, 8, 8), rng);
  Batch5D<float> wrong_dims(1, 1, 8, 8, 7);
  REQUIRE_THROWS_AS(forward(model, wrong_dims, Mode::Infer), ShapeMismatch);
  Batch5D<float> wrong_ch(1, 2, 8, 8, 8);
  REQUIRE_THROWS_AS(forward(model, wrong_ch, Mode::Infer), ShapeMismatch);
}

TEST_CASE("flatten and unflatten round-trip", "[model]") {
  SeededRng rng(32);
  Batch5D<float> x(3, 2, 2, 3, 2);
  testutil::fill_uniform(x.data, rng);
  const auto m = flatten_batch(x);
  REQUIRE(m.rows == 3);
  REQUIRE(m.cols == 2 * 2 * 3 * 2);
  const auto back = unflatten_batch(m, 2, 2, 3, 2);
  REQUIRE(back.data == x.data);
  REQUIRE_THROWS_AS(unflatten_batch(m, 2, 2, 3, 3), ShapeMismatch);
}

TEST_CASE("param refs cover the model in canonical order", "[model]") {
  SeededRng rng(33);
  auto model = build_model<double>(make_arch_spec(6, 0.0, 8, 8, 8), rng);
  const auto refs = param_refs(model);
  REQUIRE(refs.size() == 4 * model.units.size() + 2);
  REQUIRE(refs[0].name == "conv0.w");
  REQUIRE(refs[0].decay);
  REQUIRE(refs[1].name == "conv0.b");
  REQUIRE_FALSE(refs[1].decay);
  REQUIRE(refs[refs.size() - 2].name == "fc.w");
  REQUIRE(refs[refs.size() - 2].decay);
  REQUIRE(refs.back().name == "fc.b");
  REQUIRE_FALSE(refs.back().decay);
  std::size_t sum = 0;
  for (const auto& r : refs) sum += r.size;
  REQUIRE(sum == count_parameters(model));
}

TEST_CASE("whole-model gradient matches finite differences", "[model]") {
  // Small input so a full forward is cheap; batch of 3 keeps batch norm away
  // from degenerate statistics.
  const int nx = 12, ny = 12, nz = 9, n = 3;
  auto spec = make_arch_spec(4, 0.0, nx, ny, nz);
  SeededRng rng(34);
  auto model = build_model<double>(spec, rng);
  Batch5D<double> x(n, 1, nx, ny, nz);
  testutil::fill_uniform(x.data, rng, 0.05, 1.0);
  const std::vector<int> labels = {0, 1, 0};

  const auto loss = [&] {
    Model<double> scratch = model;  // do not let running stats drift
    const auto out = forward(scratch, x, Mode::Train);
    return softmax_crossentropy_batch(out.logits, labels).first;
  };

  ForwardCache<double> cache;
  const auto out = forward(model, x, Mode::Train, nullptr, &cache);
  const auto [base_loss, grad_logits] = softmax_crossentropy_batch(out.logits, labels);
  REQUIRE(std::isfinite(base_loss));
  auto grads = backward(model, cache, grad_logits);
  auto refs = param_refs(model);
  REQUIRE(grads.by_ref.size() == refs.size());
  for (std::size_t r = 0; r < refs.size(); ++r) REQUIRE(grads.by_ref[r].size() == refs[r].size);

  // Check a deterministic sample of slots from every parameter tensor.
  SeededRng pick(35);
  int checked = 0;
  for (std::size_t r = 0; r < refs.size(); ++r) {
    const std::size_t n_slots = std::min<std::size_t>(refs[r].size, 5);
    for (std::size_t s = 0; s < n_slots; ++s) {
      const std::size_t i = pick.below(refs[r].size);
      double& slot = refs[r].data[i];
      const double saved = slot;
      const double eps = 1e-5;
      slot = saved + eps;
      const double hi = loss();
      slot = saved - eps;
      const double lo = loss();
      slot = saved;
      const double num = (hi - lo) / (2 * eps);
      const double ana = grads.by_ref[r][i];
      const double scale = std::max({1.0, std::abs(num), std::abs(ana)});
      REQUIRE(std::abs(num - ana) / scale < 1e-5);
      ++checked;
    }
  }
  REQUIRE(checked >= 20 * 4);
}

TEST_CASE("dropout inside the model uses the forward rng", "[model]") {
  SeededRng rng(36);
  auto model = build_model<float>(make_arch_spec(4, 0.5, 8, 8, 8), rng);
  Batch5D<float> x(2, 1, 8, 8, 8);
  testutil::fill_uniform(x.data, rng, 0.0f, 1.0f);
  REQUIRE_THROWS_AS(forward(model, x, Mode::Train, nullptr), InvalidSpec);
  SeededRng d1(9), d2(9);
  const auto a = forward(model, x, Mode::Train, &d1);
  const auto b = forward(model, x, Mode::Train, &d2);
  REQUIRE(a.logits.data == b.logits.data);
  // inference ignores dropout entirely
  const auto c = forward(model, x, Mode::Infer, nullptr);
  for (float v : c.logits.data) REQUIRE(std::isfinite(v));
}
