#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "defrec/errors.hpp"
#include "defrec/pcm.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace defrec;

namespace {

std::vector<Vec3> sorted_rows(const PointCloud& c) {
  std::vector<Vec3> v;
  for (std::size_t i = 0; i < c.size(); ++i) v.push_back(c.point(i));
  std::sort(v.begin(), v.end(), [](const Vec3& a, const Vec3& b) {
    return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
  });
  return v;
}

std::vector<int> labels_of(Rng& rng, std::size_t n, int classes) {
  std::vector<int> l(n);
  for (int& x : l) x = static_cast<int>(uniform_index(rng, static_cast<std::size_t>(classes)));
  return l;
}

}  // namespace

TEST_SUITE("pcm") {
  TEST_CASE("gamma 1 and gamma 0 are exact") {
    Rng rng = make_rng(61);
    const LabeledCloud a{test::random_cloud(rng, 50), 1};
    const LabeledCloud b{test::random_cloud(rng, 50), 3};
    const MixedSample one = pcm_classify(a, b, 4, 1, 1, 7, 1.0);
    CHECK(sorted_rows(one.cloud) == sorted_rows(a.cloud));
    CHECK(one.soft_label == std::vector<double>{0, 1, 0, 0});
    CHECK(one.from_first == 50);
    const MixedSample zero = pcm_classify(a, b, 4, 1, 1, 7, 0.0);
    CHECK(sorted_rows(zero.cloud) == sorted_rows(b.cloud));
    CHECK(zero.soft_label == std::vector<double>{0, 0, 0, 1});
  }

  TEST_CASE("gamma 0.25 on 1024 points takes 256 from the first cloud") {
    Rng rng = make_rng(62);
    const LabeledCloud a{test::random_cloud(rng, 1024), 0};
    const LabeledCloud b{test::random_cloud(rng, 1024), 1};
    const MixedSample m = pcm_classify(a, b, 2, 1, 1, 3, 0.25);
    CHECK(m.from_first == 256);
    CHECK(m.cloud.size() == 1024);
    CHECK(m.soft_label[0] == 0.25);
    CHECK(m.soft_label[1] == 0.75);
    // Rows trace back to distinct source rows.
    std::vector<std::size_t> fa(m.source_index.begin(), m.source_index.begin() + 256);
    std::sort(fa.begin(), fa.end());
    CHECK(std::adjacent_find(fa.begin(), fa.end()) == fa.end());
    for (std::size_t i = 0; i < 1024; ++i) {
      const PointCloud& src = i < 256 ? a.cloud : b.cloud;
      CHECK(m.cloud.point(i) == src.point(m.source_index[i]));
    }
  }

  TEST_CASE("same label on both sides gives a one-hot label") {
    Rng rng = make_rng(63);
    const LabeledCloud a{test::random_cloud(rng, 10), 2};
    const MixedSample m = pcm_classify(a, a, 3, 1, 1, 5);
    CHECK(m.soft_label[2] == 1.0);
  }

  TEST_CASE("soft labels sum to one and use the realized fraction") {
    Rng rng = make_rng(64);
    for (std::uint64_t s = 0; s < 500; ++s) {
      const std::size_t n = 1 + uniform_index(rng, 40);
      const LabeledCloud a{test::random_cloud(rng, n), static_cast<int>(uniform_index(rng, 5))};
      const LabeledCloud b{test::random_cloud(rng, n), static_cast<int>(uniform_index(rng, 5))};
      const MixedSample m = pcm_classify(a, b, 5, 0.5 + uniform01(rng), 0.5 + uniform01(rng), s);
      CHECK(m.cloud.size() == n);
      CHECK(std::fabs(std::accumulate(m.soft_label.begin(), m.soft_label.end(), 0.0) - 1.0) <= 1e-12);
      for (double v : m.soft_label) CHECK((v >= 0.0 && v <= 1.0));
      CHECK(m.realized_gamma == static_cast<double>(m.from_first) / static_cast<double>(n));
      CHECK(m.from_first == static_cast<std::size_t>(std::llround(m.gamma * static_cast<double>(n))));
    }
  }

  TEST_CASE("Beta(1,1) gamma is uniform") {
    Rng rng = make_rng(65);
    const LabeledCloud a{test::random_cloud(rng, 4), 0};
    const LabeledCloud b{test::random_cloud(rng, 4), 1};
    std::vector<double> g;
    for (std::uint64_t s = 0; s < 100000; ++s) g.push_back(pcm_classify(a, b, 2, 1, 1, s).gamma);
    CHECK(oracle::ks_uniform(g) < 0.01);
  }

  TEST_CASE("errors") {
    Rng rng = make_rng(66);
    const LabeledCloud a{test::random_cloud(rng, 4), 0};
    const LabeledCloud b{test::random_cloud(rng, 5), 1};
    CHECK_THROWS_AS(pcm_classify(a, b, 2, 1, 1, 0), InvalidArgument);
    CHECK_THROWS_AS(pcm_classify(a, a, 2, 1, 1, 0, 1.5), InvalidArgument);
    const SegLabeledCloud sa{a.cloud, {0, 1, 0, 1}};
    const SegLabeledCloud sb{b.cloud, {0, 1, 0, 1, 0}};
    CHECK_THROWS_AS(pcm_segment(sa, sb, 1, 1, 0), InvalidArgument);
    CHECK_THROWS_AS(pcm_segment(sa, {a.cloud, {0}}, 1, 1, 0), DataError);
  }

  TEST_CASE("segment: labels migrate with their points") {
    Rng rng = make_rng(67);
    for (std::uint64_t s = 0; s < 200; ++s) {
      const std::size_t n = 1 + uniform_index(rng, 64);
      const SegLabeledCloud a{test::random_cloud(rng, n), labels_of(rng, n, 4)};
      const SegLabeledCloud b{test::random_cloud(rng, n), labels_of(rng, n, 4)};
      const MixedSample m = pcm_segment(a, b, 1, 1, s);
      REQUIRE(m.labels.size() == n);
      std::vector<long> hist(4, 0), expect(4, 0);
      for (std::size_t i = 0; i < n; ++i) {
        const SegLabeledCloud& src = i < m.from_first ? a : b;
        CHECK(m.cloud.point(i) == src.cloud.point(m.source_index[i]));
        CHECK(m.labels[i] == src.labels[m.source_index[i]]);
        ++hist[static_cast<std::size_t>(m.labels[i])];
        ++expect[static_cast<std::size_t>(src.labels[m.source_index[i]])];
      }
      CHECK(hist == expect);
    }
  }

  TEST_CASE("segment: gamma 1 returns the first cloud with its labels") {
    Rng rng = make_rng(68);
    const SegLabeledCloud a{test::random_cloud(rng, 30), labels_of(rng, 30, 3)};
    const SegLabeledCloud b{test::random_cloud(rng, 30), labels_of(rng, 30, 3)};
    const MixedSample m = pcm_segment(a, b, 1, 1, 2, 1.0);
    CHECK(m.from_first == 30);
    std::vector<std::pair<std::vector<double>, int>> got, want;
    for (std::size_t i = 0; i < 30; ++i) {
      const Vec3 p = m.cloud.point(i);
      got.push_back({{p.x(), p.y(), p.z()}, m.labels[i]});
      const Vec3 q = a.cloud.point(i);
      want.push_back({{q.x(), q.y(), q.z()}, a.labels[i]});
    }
    std::sort(got.begin(), got.end());
    std::sort(want.begin(), want.end());
    CHECK(got == want);
  }

  TEST_CASE("determinism") {
    Rng rng = make_rng(69);
    const LabeledCloud a{test::random_cloud(rng, 32), 0};
    const LabeledCloud b{test::random_cloud(rng, 32), 1};
    const MixedSample x = pcm_classify(a, b, 2, 1, 1, 11);
    const MixedSample y = pcm_classify(a, b, 2, 1, 1, 11);
    CHECK(x.cloud == y.cloud);
    CHECK(x.soft_label == y.soft_label);
  }
}
