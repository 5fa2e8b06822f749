#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "difd/ndgrad.hpp"

namespace {

using namespace difd::ndgrad;
using difd::Error;

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& x : t.data) x = dist(rng);
  return t;
}

TEST(Ops, MatmulIdentity) {
  Tape tape;
  auto eye = tape.constant(Tensor::matrix(2, 2, {1, 0, 0, 1}));
  auto a = tape.constant(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  auto out = matmul(eye, a);
  EXPECT_EQ(out.shape(), (Shape{2, 3}));
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(out.data()[i], a.data()[i]);
}

TEST(Ops, MaskedSoftmaxUniform) {
  Tape tape;
  auto x = tape.constant(Tensor::matrix(1, 3, {0, 0, 0}));
  auto y = masked_softmax(x, Tensor::matrix(1, 3, {1, 1, 1}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Ops, MaskedSoftmaxZeroesMaskedEntries) {
  Tape tape;
  auto x = tape.constant(Tensor::matrix(2, 3, {5, -1, 2, 0.3, 9, -4}));
  auto y = masked_softmax(x, Tensor::matrix(2, 3, {1, 0, 1, 0, 1, 1}));
  EXPECT_EQ(y.data()[1], 0.0);
  EXPECT_EQ(y.data()[3], 0.0);
  EXPECT_NEAR(y.data()[0] + y.data()[2], 1.0, 1e-12);
  EXPECT_NEAR(y.data()[4] + y.data()[5], 1.0, 1e-12);
}

TEST(Ops, MaskedSoftmaxEmptySupport) {
  Tape tape;
  auto x = tape.constant(Tensor::matrix(1, 2, {1, 2}));
  try {
    masked_softmax(x, Tensor::matrix(1, 2, {0, 0}));
    FAIL() << "expected error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("empty softmax support"), std::string::npos);
  }
}

TEST(Ops, TanhReference) {
  Tape tape;
  auto y = tanh(tape.constant(Tensor::scalar(0.5)));
  EXPECT_NEAR(y.item(), 0.46211715726000974, 1e-15);
}

TEST(Ops, ShapeMismatchNamesOpAndShapes) {
  Tape tape;
  auto a = tape.constant(Tensor(Shape{2, 3}));
  auto b = tape.constant(Tensor(Shape{2, 3}));
  try {
    matmul(a, b);
    FAIL() << "expected error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("matmul"), std::string::npos);
    EXPECT_NE(msg.find("[3,3]"), std::string::npos);
    EXPECT_NE(msg.find("[2,3]"), std::string::npos);
  }
  auto c = tape.constant(Tensor(Shape{3, 2}));
  EXPECT_THROW(add(a, c), Error);
}

TEST(Backward, Quadratic) {
  ParamStore store;
  store.add("w", Tensor(Shape{2}, {1.0, 2.0}), Partition::feature_extractor);
  Tape tape;
  auto w = tape.param(store, "w");
  tape.backward(sum(mul(w, w)), store);
  EXPECT_EQ(store.at("w").grad, (std::vector<double>{2.0, 4.0}));
}

TEST(Backward, TanhAtZero) {
  ParamStore store;
  store.add("w", Tensor::scalar(0.0), Partition::feature_extractor);
  Tape tape;
  tape.backward(tanh(tape.param(store, "w")), store);
  EXPECT_EQ(store.at("w").grad[0], 1.0);
}

TEST(Backward, RejectsNonScalarAndConsumedTape) {
  ParamStore store;
  store.add("w", Tensor(Shape{2}, {1.0, 2.0}), Partition::feature_extractor);
  Tape tape;
  auto w = tape.param(store, "w");
  EXPECT_THROW(tape.backward(mul(w, w), store), Error);
  auto loss = sum(w);
  tape.backward(loss, store);
  EXPECT_TRUE(tape.consumed());
  EXPECT_THROW(tape.backward(loss, store), Error);
}

TEST(Backward, FrozenPartitionReceivesNoGradient) {
  ParamStore store;
  store.add("f", Tensor(Shape{2}, {1.0, 2.0}), Partition::feature_extractor);
  store.add("d", Tensor(Shape{2}, {3.0, -1.0}), Partition::domain_classifier);
  {
    Tape tape;
    auto loss = sum(mul(tape.param(store, "f"), tape.param(store, "d")));
    auto touched = tape.backward(loss, store, PartitionSet::only(Partition::domain_classifier));
    EXPECT_EQ(touched, std::vector<std::string>{"f"});
  }
  EXPECT_TRUE(store.at("f").has_grad());
  EXPECT_FALSE(store.at("d").has_grad());
  store.zero_grad();
  {
    Tape tape;
    auto loss = sum(mul(tape.param(store, "f"), tape.param(store, "d")));
    tape.backward(loss, store, PartitionSet::only(Partition::feature_extractor));
  }
  EXPECT_FALSE(store.at("f").has_grad());
  EXPECT_EQ(store.at("d").grad, (std::vector<double>{1.0, 2.0}));
}

TEST(Backward, FrozenRowsGetNoGradient) {
  ParamStore store;
  store.add("emb", Tensor::matrix(3, 2, {0, 0, 1, 2, 3, 4}), Partition::feature_extractor, {0});
  Tape tape;
  auto rows = row_gather(tape.param(store, "emb"), {0, 1, 2, 0});
  tape.backward(sum(rows), store);
  const auto& g = store.at("emb").grad;
  EXPECT_EQ(g, (std::vector<double>{0, 0, 1, 1, 1, 1}));
}

TEST(Backward, ReplayIsBitIdentical) {
  std::mt19937_64 rng(3);
  ParamStore store;
  store.add("w", random_tensor(rng, {4, 3}), Partition::feature_extractor);
  store.add("x", random_tensor(rng, {5, 3}), Partition::feature_extractor);
  auto run = [&]() {
    store.zero_grad();
    Tape tape;
    auto h = tanh(matmul_nt(tape.param(store, "x"), tape.param(store, "w")));
    auto loss = sum(log_softmax(h));
    const double v = loss.item();
    tape.backward(loss, store);
    auto g = store.at("w").grad;
    g.push_back(v);
    return g;
  };
  EXPECT_EQ(run(), run());
}

TEST(Sgd, Arithmetic) {
  ParamStore store;
  store.add("p", Tensor::scalar(1.0), Partition::feature_extractor);
  store.at("p").grad = {0.5};
  sgd_step(store, PartitionSet::only(Partition::feature_extractor), {0.01, std::nullopt, 0.0});
  EXPECT_DOUBLE_EQ(store.at("p").value.data[0], 0.995);
  EXPECT_FALSE(store.at("p").has_grad());
}

TEST(Sgd, ClipHalvesGradient) {
  ParamStore store;
  store.add("p", Tensor(Shape{2}, {0.0, 0.0}), Partition::feature_extractor);
  store.at("p").grad = {2.0, 0.0};
  auto report = sgd_step(store, PartitionSet::only(Partition::feature_extractor), {1.0, 1.0, 0.0});
  EXPECT_DOUBLE_EQ(report.grad_norm[0], 2.0);
  EXPECT_DOUBLE_EQ(report.scale[0], 0.5);
  EXPECT_DOUBLE_EQ(store.at("p").value.data[0], -1.0);
}

TEST(Sgd, TwoStepsEqualOneSummedStep) {
  ParamStore a;
  a.add("p", Tensor(Shape{2}, {0.25, -0.5}), Partition::feature_extractor);
  ParamStore b = a;
  const std::vector<double> g = {0.5, -0.25};
  const SgdOptions opt{0.125, std::nullopt, 0.0};
  for (int i = 0; i < 2; ++i) {
    a.at("p").grad = g;
    sgd_step(a, PartitionSet::only(Partition::feature_extractor), opt);
  }
  b.at("p").grad = {2 * g[0], 2 * g[1]};
  sgd_step(b, PartitionSet::only(Partition::feature_extractor), opt);
  EXPECT_EQ(a.at("p").value.data, b.at("p").value.data);
}

TEST(Sgd, OtherPartitionUntouchedAndMissingGradsNamed) {
  ParamStore store;
  store.add("f", Tensor::scalar(1.0), Partition::feature_extractor);
  store.add("d", Tensor::scalar(2.0), Partition::domain_classifier);
  store.add("g", Tensor::scalar(3.0), Partition::feature_extractor);
  store.at("f").grad = {1.0};
  store.at("d").grad = {1.0};
  ParamStore before = store;
  try {
    sgd_step(store, PartitionSet::only(Partition::feature_extractor), {});
    FAIL() << "expected missing-gradient error";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("g"), std::string::npos);
  }
  store.at("g").grad = {1.0};
  sgd_step(store, PartitionSet::only(Partition::feature_extractor), {});
  EXPECT_TRUE(partition_equal(before, store, Partition::domain_classifier));
  EXPECT_FALSE(partition_equal(before, store, Partition::feature_extractor));
  EXPECT_TRUE(store.at("d").has_grad());
}

TEST(Sgd, FrozenRowsStayPut) {
  ParamStore store;
  store.add("emb", Tensor::matrix(2, 1, {0.0, 1.0}), Partition::feature_extractor, {0});
  store.at("emb").grad = {5.0, 1.0};
  sgd_step(store, PartitionSet::only(Partition::feature_extractor), {0.5, std::nullopt, 0.0});
  EXPECT_EQ(store.at("emb").value.data[0], 0.0);
  EXPECT_DOUBLE_EQ(store.at("emb").value.data[1], 0.5);
}

TEST(GradCheck, LinearRegressionPasses) {
  std::mt19937_64 rng(11);
  ParamStore store;
  store.add("w", random_tensor(rng, {1, 3}), Partition::feature_extractor);
  store.add("b", Tensor::scalar(0.1), Partition::feature_extractor);
  const Tensor x = random_tensor(rng, {8, 3});
  const Tensor y = random_tensor(rng, {8, 1});
  auto closure = [&](Tape& tape) {
    auto pred = add(matmul_nt(tape.constant(x), tape.param(store, "w")), tape.param(store, "b"));
    auto err = sub(pred, tape.constant(y));
    return mean(mul(err, err));
  };
  auto report = finite_diff_check(closure, store, 1e-6);
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(GradCheck, CorruptedOpFailsAndNamesParameter) {
  std::mt19937_64 rng(12);
  ParamStore store;
  store.add("w", random_tensor(rng, {2, 3}), Partition::feature_extractor);
  store.add("v", random_tensor(rng, {1, 2}), Partition::feature_extractor);
  const Tensor x = random_tensor(rng, {4, 3});
  auto closure = [&](Tape& tape) {
    auto h = tanh(matmul_nt(tape.constant(x), tape.param(store, "w")));
    return sum(mul(h, tape.param(store, "v")));
  };
  GradCheckOptions opt;
  opt.corrupt = Op::tanh;
  auto report = finite_diff_check(closure, store, 1e-4, opt);
  EXPECT_FALSE(report.passed());
  EXPECT_EQ(report.failing(), std::vector<std::string>{"w"});
}

TEST(GradCheck, NonFiniteLossIsAnError) {
  ParamStore store;
  store.add("w", Tensor::scalar(-1.0), Partition::feature_extractor);
  auto closure = [&](Tape& tape) { return log(tape.param(store, "w")); };
  EXPECT_THROW(finite_diff_check(closure, store, 1e-4), Error);
}

// Every op's reverse rule against central differences on random inputs:
// loss = sum(op(inputs) * R) for a fixed random R, so the check exercises a
// generic vector-Jacobian product rather than the all-ones cotangent.
struct OpCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<Value(Tape&, std::vector<Value>&)> build;
  bool positive = false;
};

class OpGradient : public ::testing::TestWithParam<int> {};

std::vector<OpCase> op_cases() {
  return {
      {"matmul", {{3, 4}, {4, 2}}, [](Tape&, auto& v) { return matmul(v[0], v[1]); }},
      {"matmul_nt", {{3, 4}, {2, 4}}, [](Tape&, auto& v) { return matmul_nt(v[0], v[1]); }},
      {"add", {{3, 4}, {3, 4}}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
      {"add_row", {{3, 4}, {4}}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
      {"add_scalar", {{3, 4}, {1}}, [](Tape&, auto& v) { return add(v[0], v[1]); }},
      {"sub_col", {{3, 4}, {3, 1}}, [](Tape&, auto& v) { return sub(v[0], v[1]); }},
      {"mul", {{3, 4}, {3, 4}}, [](Tape&, auto& v) { return mul(v[0], v[1]); }},
      {"mul_col", {{3, 4}, {3, 1}}, [](Tape&, auto& v) { return mul(v[0], v[1]); }},
      {"blend", {{3, 4}, {3, 4}}, [](Tape&, auto& v) { return blend(v[0], v[1], Tensor::matrix(3, 1, {1, 0, 1})); }},
      {"concat_last_dim", {{3, 2}, {3, 3}}, [](Tape&, auto& v) { return concat_last_dim(v); }},
      {"concat_rows", {{2, 3}, {1, 3}}, [](Tape&, auto& v) { return concat_rows(v); }},
      {"row_gather", {{4, 3}}, [](Tape&, auto& v) { return row_gather(v[0], {3, 0, 3, 1}); }},
      {"slice_last_dim", {{3, 5}}, [](Tape&, auto& v) { return slice_last_dim(v[0], 1, 4); }},
      {"transpose", {{3, 2}}, [](Tape&, auto& v) { return transpose(v[0]); }},
      {"tanh", {{3, 4}}, [](Tape&, auto& v) { return tanh(v[0]); }},
      {"sigmoid", {{3, 4}}, [](Tape&, auto& v) { return sigmoid(v[0]); }},
      {"relu", {{3, 4}}, [](Tape&, auto& v) { return relu(v[0]); }},
      {"log", {{3, 4}}, [](Tape&, auto& v) { return log(v[0]); }, true},
      {"masked_softmax", {{3, 4}},
       [](Tape&, auto& v) { return masked_softmax(v[0], Tensor::matrix(3, 4, {1, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 1})); }},
      {"log_softmax", {{3, 4}}, [](Tape&, auto& v) { return log_softmax(v[0]); }},
      {"sum", {{3, 4}}, [](Tape&, auto& v) { return sum(v[0]); }},
      {"sum_lastdim", {{3, 4}}, [](Tape&, auto& v) { return sum_lastdim(v[0]); }},
      {"mean", {{3, 4}}, [](Tape&, auto& v) { return mean(v[0]); }},
      {"scalar_mul", {{3, 4}}, [](Tape&, auto& v) { return scalar_mul(v[0], -2.5); }},
  };
}

TEST_P(OpGradient, MatchesCentralDifferences) {
  const auto cases = op_cases();
  const auto& c = cases.at(static_cast<std::size_t>(GetParam()));
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::mt19937_64 rng(seed * 7919 + static_cast<std::uint64_t>(GetParam()));
    ParamStore store;
    for (std::size_t k = 0; k < c.inputs.size(); ++k) {
      // Keep relu inputs away from the kink and log inputs positive.
      Tensor t = c.positive ? random_tensor(rng, c.inputs[k], 0.5, 2.0) : random_tensor(rng, c.inputs[k]);
      if (std::string(c.name) == "relu") {
        for (auto& x : t.data) x += x >= 0 ? 0.1 : -0.1;
      }
      store.add("in" + std::to_string(k), t, Partition::feature_extractor);
    }
    Tensor weights;
    {
      Tape probe;
      std::vector<Value> v;
      for (std::size_t k = 0; k < c.inputs.size(); ++k) v.push_back(probe.param(store, "in" + std::to_string(k)));
      weights = random_tensor(rng, c.build(probe, v).shape());
    }
    auto closure = [&](Tape& tape) {
      std::vector<Value> v;
      for (std::size_t k = 0; k < c.inputs.size(); ++k) v.push_back(tape.param(store, "in" + std::to_string(k)));
      return sum(mul(c.build(tape, v), tape.constant(weights)));
    };
    GradCheckOptions opt;
    opt.step = 1e-6;
    auto report = finite_diff_check(closure, store, 1e-6, opt);
    EXPECT_TRUE(report.passed()) << c.name << " seed " << seed << " max rel err " << report.max_rel_error();
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range(0, static_cast<int>(op_cases().size())),
                         [](const auto& info) { return std::string(op_cases().at(static_cast<std::size_t>(info.param)).name); });

TEST(Properties, SoftmaxRowsSumToOne) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.6);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor x = random_tensor(rng, {4, 6}, -30, 30);
    Tensor m(Shape{4, 6});
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) m(r, c) = coin(rng) ? 1.0 : 0.0;
      m(r, r) = 1.0;
    }
    Tape tape;
    auto y = masked_softmax(tape.constant(x), m);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        if (m(r, c) == 0.0) {
          EXPECT_EQ(y.tensor()(r, c), 0.0);
        }
        s += y.tensor()(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  std::mt19937_64 rng(9);
  ParamStore store;
  store.add("emb", random_tensor(rng, {3, 2}), Partition::feature_extractor, {0});
  store.add("dc.w", random_tensor(rng, {2, 2}), Partition::domain_classifier);
  const std::string bytes = encode_checkpoint(store, {{"d_h", 3}});
  EXPECT_EQ(bytes.substr(0, 11), "DIFD-CKPT-1");
  auto ck = decode_checkpoint(bytes);
  EXPECT_EQ(ck.metadata.at("d_h"), 3);
  ASSERT_EQ(ck.store.size(), 2u);
  EXPECT_TRUE(partition_equal(store, ck.store, Partition::feature_extractor));
  EXPECT_TRUE(partition_equal(store, ck.store, Partition::domain_classifier));
  EXPECT_EQ(ck.store.at("emb").frozen_rows, std::vector<std::size_t>{0});
  EXPECT_EQ(encode_checkpoint(ck.store, ck.metadata), bytes);
  EXPECT_THROW(decode_checkpoint("garbage"), Error);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), Error);
}

}  // namespace
