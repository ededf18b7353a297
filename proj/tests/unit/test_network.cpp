#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "defrec/errors.hpp"
#include "defrec/losses.hpp"
#include "defrec/network.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace defrec;

namespace {

Model<double> toy_model(bool seg, std::uint64_t seed) {
  Model<double> m(oracle::toy_shape(seg));
  m.init_glorot(seed);
  // Non-zero biases so every path is exercised.
  Rng rng = make_rng(seed + 1000);
  for (const TensorInfo& t : m.layout().tensors)
    if (t.name.ends_with(".b"))
      for (std::size_t k = t.offset; k < t.offset + static_cast<std::size_t>(t.cols); ++k) m.params()[k] = 0.1 * (uniform01(rng) - 0.3);
  return m;
}

}  // namespace

TEST_SUITE("network") {
  TEST_CASE("layout matches the configured widths") {
    NetworkShape s;
    s.num_classes = 10;
    const ParamLayout l = ParamLayout::build(s);
    CHECK(l.encoder.size() == 5);
    CHECK(l.tensors[static_cast<std::size_t>(l.encoder.back().w)].cols == 1024);
    CHECK(l.sup.size() == 3);
    CHECK(l.tensors[static_cast<std::size_t>(l.sup[0].w)].cols == 512);
    CHECK(l.tensors[static_cast<std::size_t>(l.sup[1].w)].cols == 256);
    CHECK(l.tensors[static_cast<std::size_t>(l.sup[2].w)].cols == 10);
    CHECK(l.ssl.size() == 4);
    CHECK(l.tensors[static_cast<std::size_t>(l.ssl[0].w_global)].rows == 1024);
    CHECK(l.tensors[static_cast<std::size_t>(l.ssl[3].w)].cols == 3);
    CHECK(l.seg.empty());
    CHECK(l.find("nope") == -1);

    s.segmentation = true;
    s.num_classes = 8;
    const ParamLayout ls = ParamLayout::build(s);
    CHECK(ls.sup.empty());
    CHECK(ls.tensors[static_cast<std::size_t>(ls.seg.back().w)].cols == 8);
  }

  TEST_CASE("shape validation") {
    NetworkShape s;
    s.num_classes = 1;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    s.dropout = 1.0;
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
    s = {};
    s.point_widths.clear();
    CHECK_THROWS_AS(s.validate(), InvalidArgument);
  }

  TEST_CASE("glorot init stays in bounds with zero biases") {
    Model<double> m(oracle::toy_shape(false));
    m.init_glorot(3);
    for (const TensorInfo& t : m.layout().tensors) {
      const double bound = std::sqrt(6.0 / static_cast<double>(t.rows + t.cols));
      for (std::size_t k = t.offset; k < t.offset + static_cast<std::size_t>(t.rows * t.cols); ++k) {
        if (t.name.ends_with(".b")) CHECK(m.params()[k] == 0.0);
        else CHECK(std::fabs(m.params()[k]) <= bound);
      }
    }
  }

  TEST_CASE("global feature is permutation invariant") {
    Rng rng = make_rng(71);
    const Model<double> m = toy_model(false, 1);
    const PointCloud c = test::random_cloud(rng, 40);
    std::vector<std::size_t> perm = shuffled_indices(rng, 40);
    const auto a = encode(m, {c});
    const auto b = encode(m, {c.select(perm)});
    CHECK(a.global == b.global);
  }

  TEST_CASE("full-width float model: order and batch do not change any output bit") {
    Rng rng = make_rng(74);
    NetworkShape shape;
    shape.num_classes = 5;
    Model<float> m(shape);
    m.init_glorot(9);
    const PointCloud c = test::random_cloud(rng, 301);
    const PointCloud other = test::random_cloud(rng, 77);
    const std::vector<std::size_t> perm = shuffled_indices(rng, 301);
    const auto alone = encode(m, {c});
    CHECK(encode(m, {c.select(perm)}).global == alone.global);
    const auto batched = encode(m, {other, c});
    CHECK(batched.global.row(1) == alone.global.row(0));
    const auto ssl_alone = head_ssl(m, alone).output;
    const auto ssl_batched = head_ssl(m, batched).output;
    CHECK(ssl_batched.bottomRows(301) == ssl_alone);
    CHECK(head_sup(m, batched, Mode::Eval).output.row(1) == head_sup(m, alone, Mode::Eval).output.row(0));
  }

  TEST_CASE("n = 1: global feature equals the per-point feature") {
    const Model<double> m = toy_model(false, 2);
    const auto e = encode(m, {PointCloud::from_points({{0.1, -0.2, 0.3}})});
    CHECK(e.global == e.layers.back());
  }

  TEST_CASE("zero weights give a zero global feature") {
    Model<double> m(oracle::toy_shape(false));
    std::fill(m.params().begin(), m.params().end(), 0.0);
    Rng rng = make_rng(72);
    CHECK(encode(m, {test::random_cloud(rng, 10)}).global.isZero(0.0));
  }

  TEST_CASE("batched encoding equals per-cloud encoding") {
    Rng rng = make_rng(73);
    const Model<double> m = toy_model(false, 3);
    const PointCloud a = test::random_cloud(rng, 12);
    const PointCloud b = test::random_cloud(rng, 20);
    const auto both = encode(m, {a, b});
    CHECK(both.global.row(0) == encode(m, {a}).global.row(0));
    CHECK(both.global.row(1) == encode(m, {b}).global.row(0));
    CHECK(both.offsets == std::vector<Eigen::Index>{0, 12, 32});
  }

  TEST_CASE("h_sup: eval deterministic, dropout seeded, logits length C") {
    Rng rng = make_rng(74);
    const Model<double> m = toy_model(false, 4);
    const auto e = encode(m, {test::random_cloud(rng, 16), test::random_cloud(rng, 16)});
    const auto x = head_sup(m, e, Mode::Eval);
    CHECK(x.output == head_sup(m, e, Mode::Eval).output);
    CHECK(x.output.cols() == 3);
    CHECK(x.output.rows() == 2);
    const auto t1 = head_sup(m, e, Mode::Train, 9);
    CHECK(t1.output == head_sup(m, e, Mode::Train, 9).output);
    CHECK(!(t1.output == head_sup(m, e, Mode::Train, 10).output));
    CHECK(!(t1.output == x.output));
  }

  TEST_CASE("dropout keeps about half the units with inverted scaling") {
    NetworkShape s = oracle::toy_shape(false);
    s.sup_widths = {400, 400};
    Model<double> m(s);
    m.init_glorot(5);
    Rng rng = make_rng(75);
    const auto e = encode(m, {test::random_cloud(rng, 8)});
    const auto t = head_sup(m, e, Mode::Train, 1);
    REQUIRE(t.mask.size() == 2);
    for (const auto& mask : t.mask) {
      const double kept = static_cast<double>((mask.array() > 0).count());
      CHECK(kept / static_cast<double>(mask.size()) == doctest::Approx(0.5).epsilon(0.1));
      for (Eigen::Index i = 0; i < mask.size(); ++i) CHECK((mask.data()[i] == 0.0 || mask.data()[i] == 2.0));
    }
  }

  TEST_CASE("h_SSL: shape, duplicated points, zero final layer") {
    Rng rng = make_rng(76);
    Model<double> m = toy_model(false, 6);
    PointMatrix pts = test::random_points(rng, 10);
    pts.row(9) = pts.row(3);
    const auto e = encode(m, {PointCloud(pts)});
    const auto r = head_ssl(m, e);
    CHECK(r.output.rows() == 10);
    CHECK(r.output.cols() == 3);
    CHECK(r.output.row(9) == r.output.row(3));

    const DenseRef last = m.layout().ssl.back();
    m.tensor(last.w).setZero();
    m.tensor(last.b).setZero();
    CHECK(head_ssl(m, e).output.isZero(0.0));
  }

  TEST_CASE("h_SSL is permutation equivariant") {
    Rng rng = make_rng(77);
    const Model<double> m = toy_model(false, 7);
    const PointCloud c = test::random_cloud(rng, 25);
    const auto perm = shuffled_indices(rng, 25);
    const auto a = head_ssl(m, encode(m, {c})).output;
    const auto b = head_ssl(m, encode(m, {c.select(perm)})).output;
    for (std::size_t i = 0; i < 25; ++i)
      CHECK(b.row(static_cast<Eigen::Index>(i)) == a.row(static_cast<Eigen::Index>(perm[i])));
  }

  TEST_CASE("classification model has no segmentation head and vice versa") {
    Rng rng = make_rng(78);
    const Model<double> cls = toy_model(false, 8);
    const Model<double> seg = toy_model(true, 8);
    const PointCloud c = test::random_cloud(rng, 8);
    CHECK_THROWS_AS(head_seg(cls, encode(cls, {c})), InvalidArgument);
    CHECK_THROWS_AS(head_sup(seg, encode(seg, {c}), Mode::Eval), InvalidArgument);
    CHECK(head_seg(seg, encode(seg, {c})).output.cols() == 4);
  }

  TEST_CASE("non-finite activations raise a numerical error") {
    Model<double> m = toy_model(false, 9);
    m.params()[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(encode(m, {PointCloud::from_points({{1, 1, 1}})}), doctest::Contains("numerical overflow"),
                         NumericalError);
  }

  TEST_CASE("gradient check: classification + Chamfer composite") {
    for (std::uint64_t seed = 1; seed <= 2; ++seed) {
      Model<double> m = toy_model(false, seed);
      const auto report = oracle::finite_difference_check(m, oracle::make_toy_problem(false, seed));
      INFO("worst " << report.worst_error << " in " << report.worst_tensor);
      CHECK(report.pass_fraction() >= 0.99);
    }
  }

  TEST_CASE("gradient check: segmentation + Chamfer composite") {
    // Per-point heads cross many ReLU kinks at h = 1e-5; a finer step isolates the derivative.
    Model<double> m = toy_model(true, 3);
    const auto report = oracle::finite_difference_check(m, oracle::make_toy_problem(true, 3), 1e-6);
    INFO("worst " << report.worst_error << " in " << report.worst_tensor);
    CHECK(report.pass_fraction() >= 0.99);
  }

  TEST_CASE("zero upstream gradient gives zero gradients") {
    Rng rng = make_rng(79);
    const Model<double> m = toy_model(false, 10);
    ForwardTrace<double> tr;
    tr.encoder = encode(m, {test::random_cloud(rng, 16)});
    tr.sup = head_sup(m, tr.encoder, Mode::Train, 1);
    tr.ssl = head_ssl(m, tr.encoder);
    tr.param_count = m.params().size();
    const MatX<double> gl = MatX<double>::Zero(1, 3);
    const MatX<double> gr = MatX<double>::Zero(16, 3);
    const auto g = backward(m, tr, OutputGrads<double>{&gl, &gr, nullptr});
    CHECK(std::all_of(g.values.begin(), g.values.end(), [](double v) { return v == 0.0; }));
  }

  TEST_CASE("unused heads receive zero gradient") {
    Model<double> m = toy_model(false, 11);
    oracle::CompositeProblem p = oracle::make_toy_problem(false, 11);
    p.ssl_pairs.clear();
    Gradients<double> g(m.params().size());
    oracle::composite_loss(m, p, &g);
    for (const TensorInfo& t : m.layout().tensors) {
      if (!t.name.starts_with("ssl")) continue;
      for (std::size_t k = t.offset; k < t.offset + static_cast<std::size_t>(t.rows * t.cols); ++k) CHECK(g.values[k] == 0.0);
    }

    p = oracle::make_toy_problem(false, 11);
    p.sup_inputs.clear();
    g.zero();
    oracle::composite_loss(m, p, &g);
    for (const TensorInfo& t : m.layout().tensors) {
      if (!t.name.starts_with("sup")) continue;
      for (std::size_t k = t.offset; k < t.offset + static_cast<std::size_t>(t.rows * t.cols); ++k) CHECK(g.values[k] == 0.0);
    }
  }

  TEST_CASE("a small gradient step decreases the loss") {
    Model<double> m = toy_model(false, 12);
    const oracle::CompositeProblem p = oracle::make_toy_problem(false, 12);
    Gradients<double> g(m.params().size());
    const double before = oracle::composite_loss(m, p, &g);
    for (std::size_t k = 0; k < g.values.size(); ++k) m.params()[k] -= 1e-4 * g.values[k];
    CHECK(oracle::composite_loss(m, p, nullptr) < before);
  }

  TEST_CASE("trace from another model is rejected") {
    Rng rng = make_rng(80);
    const Model<double> m = toy_model(false, 13);
    NetworkShape s = oracle::toy_shape(false);
    s.global_width = 16;
    Model<double> other(s);
    other.init_glorot(1);
    ForwardTrace<double> tr;
    tr.encoder = encode(other, {test::random_cloud(rng, 8)});
    tr.sup = head_sup(other, tr.encoder, Mode::Eval);
    tr.param_count = other.params().size();
    const MatX<double> gl = MatX<double>::Zero(1, 3);
    CHECK_THROWS_AS(backward(m, tr, OutputGrads<double>{&gl, nullptr, nullptr}), InvalidArgument);
  }

  TEST_CASE("float and double models agree closely") {
    Rng rng = make_rng(81);
    const Model<double> md = toy_model(false, 14);
    const Model<float> mf = md.cast<float>();
    const PointCloud c = test::random_cloud(rng, 20);
    const auto d = head_sup(md, encode(md, {c}), Mode::Eval).output;
    const auto f = head_sup(mf, encode(mf, {c}), Mode::Eval).output;
    CHECK((d - f.cast<double>()).cwiseAbs().maxCoeff() < 1e-4);
  }

  TEST_CASE("feature extraction is eval mode and batch independent") {
    Rng rng = make_rng(82);
    const Model<float> m = toy_model(false, 15).cast<float>();
    std::vector<PointCloud> clouds;
    for (int i = 0; i < 7; ++i) clouds.push_back(test::random_cloud(rng, 16));
    const Eigen::MatrixXd a = extract_features(m, clouds, 64);
    const Eigen::MatrixXd b = extract_features(m, clouds, 3);
    CHECK(a.rows() == 7);
    CHECK(a.cols() == 8);
    CHECK(a == b);
    CHECK(a.minCoeff() >= 0.0);
    const Eigen::MatrixXd pf = point_features(m, clouds[0], 2);
    CHECK(pf.rows() == 16);
    CHECK(pf.cols() == 8);
    CHECK_THROWS_AS(point_features(m, clouds[0], 9), InvalidArgument);
  }
}
