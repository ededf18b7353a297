#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "defrec/benchmark_gen.hpp"
#include "defrec/checkpoint.hpp"
#include "defrec/chamfer.hpp"
#include "defrec/cloud_io.hpp"
#include "defrec/errors.hpp"
#include "defrec/fs_util.hpp"
#include "helpers.hpp"

using namespace defrec;
namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

Dataset small_dataset(bool per_point) {
  Rng rng = make_rng(121);
  Dataset d;
  d.name = "small";
  d.num_classes = 3;
  for (int i = 0; i < 5; ++i) {
    Sample s;
    // Float-representable coordinates so the f32 archive is lossless.
    PointMatrix m = test::random_points(rng, 4 + static_cast<std::size_t>(i));
    m = m.cast<float>().cast<double>();
    s.cloud = PointCloud(m);
    if (per_point) {
      for (std::size_t k = 0; k < s.cloud.size(); ++k) s.point_labels.push_back(static_cast<int>(k % 3));
    } else {
      s.label = i % 3;
    }
    d.samples.push_back(s);
    d.splits.push_back(i < 3 ? Split::Train : Split::Test);
  }
  return d;
}

}  // namespace

TEST_SUITE("io") {
  TEST_CASE("xyz: points, labels and errors with line numbers") {
    const LoadedCloud c = parse_xyz("0 0 0\n1 0 0\n");
    CHECK(c.cloud.size() == 2);
    CHECK(c.cloud.point(1) == Vec3(1, 0, 0));
    CHECK(!c.labels);

    const LoadedCloud l = parse_xyz("# comment\n0 0 0 2\n\n1 2 3 1\n");
    REQUIRE(l.labels);
    CHECK(*l.labels == std::vector<int>{2, 1});

    CHECK_THROWS_WITH_AS(parse_xyz("0 0 0\n1 x 0\n"), doctest::Contains("line 2"), DataError);
    CHECK_THROWS_WITH_AS(parse_xyz("0 0 0\n1 0\n"), doctest::Contains("line 2"), DataError);
    CHECK_THROWS_AS(parse_xyz("0 0 nan\n"), DataError);
    CHECK_THROWS_AS(parse_xyz("0 0 0 1\n1 1 1\n"), DataError);
    CHECK_THROWS_AS(parse_xyz(""), DataError);
  }

  TEST_CASE("ply: vertices, labels, other elements, errors") {
    const std::string ply =
        "ply\nformat ascii 1.0\ncomment x\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\n"
        "property int label\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0 1\n1 0 0 0\n0 1 0 2\n3 0 1 2\n";
    const LoadedCloud c = parse_ply(ply);
    CHECK(c.cloud.size() == 3);
    REQUIRE(c.labels);
    CHECK(*c.labels == std::vector<int>{1, 0, 2});

    const std::string empty = "ply\nformat ascii 1.0\nelement vertex 0\nproperty float x\nproperty float y\n"
                              "property float z\nend_header\n";
    CHECK_THROWS_WITH_AS(parse_ply(empty), doctest::Contains("empty cloud"), DataError);
    CHECK_THROWS_AS(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n"), DataError);
    CHECK_THROWS_AS(parse_ply("not a ply\n"), DataError);
    const std::string short_body = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
                                   "property float z\nend_header\n0 0 0\n";
    CHECK_THROWS_AS(parse_ply(short_body), DataError);
  }

  TEST_CASE("archive: bit-exact round trip with both label kinds") {
    for (bool per_point : {false, true}) {
      const Dataset d = small_dataset(per_point);
      const auto bytes = serialize_archive(d);
      CHECK(bytes[0] == 'D');
      const Dataset back = deserialize_archive(bytes);
      CHECK(back.num_classes == 3);
      REQUIRE(back.samples.size() == d.samples.size());
      for (std::size_t i = 0; i < d.samples.size(); ++i) {
        CHECK(back.samples[i].cloud == d.samples[i].cloud);
        CHECK(back.samples[i].label == d.samples[i].label);
        CHECK(back.samples[i].point_labels == d.samples[i].point_labels);
      }
      CHECK(serialize_archive(back) == bytes);
    }
  }

  TEST_CASE("archive: truncation and bad magic are rejected") {
    const auto bytes = serialize_archive(small_dataset(false));
    for (std::size_t cut : {std::size_t{3}, std::size_t{17}, bytes.size() - 1}) {
      const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(deserialize_archive(part), DataError);
    }
    auto bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(deserialize_archive(bad), DataError);
  }

  TEST_CASE("files: load by extension and by content") {
    const fs::path dir = test::temp_dir("io_files");
    write_file(dir / "a.xyz", "0 0 0\n1 0 0\n");
    CHECK(load_cloud(dir / "a.xyz").cloud.size() == 2);
    write_file(dir / "noext", "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
                              "property float z\nend_header\n0.5 0 0\n");
    CHECK(load_cloud(dir / "noext").cloud.size() == 1);

    const Dataset d = small_dataset(true);
    save_archive(dir / "d.dfrc", d);
    const LoadedCloud third = load_cloud(dir / "d.dfrc", 2);
    CHECK(third.cloud == d.samples[2].cloud);
    CHECK(*third.labels == d.samples[2].point_labels);
    CHECK_THROWS_AS(load_cloud(dir / "d.dfrc", 99), InvalidArgument);
    CHECK_THROWS_AS(load_cloud(dir / "missing.xyz"), DataError);

    write_file(dir / "bad.xyz", "0 0 0\n0 0\n");
    CHECK_THROWS_WITH(load_cloud(dir / "bad.xyz"), doctest::Contains("bad.xyz"));

    Rng rng = make_rng(122);
    const PointCloud c = test::random_cloud(rng, 20);
    save_xyz(dir / "out.xyz", c);
    CHECK(load_cloud(dir / "out.xyz").cloud == c);
    const std::vector<int> labels(20, 1);
    save_xyz(dir / "lab.xyz", c, &labels);
    CHECK(*load_cloud(dir / "lab.xyz").labels == labels);
  }

  TEST_CASE("dataset views and validation") {
    const Dataset d = small_dataset(false);
    CHECK(!d.per_point_labels());
    CHECK(d.labeled().size() == 5);
    CHECK(d.labeled(Split::Train).size() == 3);
    CHECK(d.clouds(Split::Test).size() == 2);
    CHECK_NOTHROW(d.validate());
    Dataset bad = d;
    bad.samples[0].label = 7;
    CHECK_THROWS_AS(bad.validate(), DataError);
    const Dataset s = small_dataset(true);
    CHECK(s.per_point_labels());
    CHECK(s.seg_labeled(Split::Train).size() == 3);
  }

  TEST_CASE("prepare_sample: unit cube and exact size, labels follow points") {
    Rng rng = make_rng(123);
    Sample raw;
    raw.cloud = test::random_cloud(rng, 100);
    for (std::size_t i = 0; i < 100; ++i) raw.point_labels.push_back(raw.cloud.point(i).x() > 0 ? 1 : 0);
    for (std::size_t n : {std::size_t{32}, std::size_t{100}, std::size_t{250}}) {
      const Sample s = prepare_sample(raw, n, 4);
      CHECK(s.cloud.size() == n);
      CHECK(s.cloud.points().cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
      REQUIRE(s.point_labels.size() == n);
      const Vec3 lo = raw.cloud.bbox_min();
      const Vec3 hi = raw.cloud.bbox_max();
      const double scale = (hi - lo).maxCoeff();
      const Vec3 center = 0.5 * (lo + hi);
      for (std::size_t i = 0; i < n; ++i) {
        const double x = s.cloud.point(i).x() * scale + center.x();
        CHECK(s.point_labels[i] == (x > 0 ? 1 : 0));
      }
    }
  }

  TEST_CASE("benchmark: shared classes, exact sizes, target differs from source") {
    BenchmarkSpec spec;
    spec.source_train = 6;
    spec.source_test = 3;
    spec.target_train = 6;
    spec.target_test = 3;
    spec.points = 64;
    const Benchmark b = gen_benchmark(spec, 9);
    CHECK(b.source.num_classes == b.target.num_classes);
    CHECK(b.source.samples.size() == 9);
    CHECK(b.target.samples.size() == 9);
    for (const Dataset* d : {&b.source, &b.target})
      for (const Sample& s : d->samples) {
        CHECK(s.cloud.size() == 64);
        CHECK((s.label >= 0 && s.label < 3));
      }
    double min_cd = 1e300;
    for (const Sample& t : b.target.samples)
      for (const Sample& s : b.source.samples) min_cd = std::min(min_cd, chamfer_distance(t.cloud.points(), s.cloud.points()));
    CHECK(min_cd > 0.0);

    const Benchmark again = gen_benchmark(spec, 9);
    CHECK(serialize_archive(again.target) == serialize_archive(b.target));

    spec.num_classes = 1;
    CHECK_THROWS_AS(spec.validate(), InvalidArgument);
  }

  TEST_CASE("benchmark: segmentation parts") {
    BenchmarkSpec spec;
    spec.segmentation = true;
    spec.source_train = 2;
    spec.source_test = 1;
    spec.target_train = 2;
    spec.target_test = 1;
    spec.points = 128;
    const Benchmark b = gen_benchmark(spec, 2);
    CHECK(b.source.num_classes == kSegmentationParts);
    CHECK(b.source.per_point_labels());
    for (const Sample& s : b.source.samples) {
      std::set<int> parts(s.point_labels.begin(), s.point_labels.end());
      CHECK(parts.size() >= 3);
      CHECK(s.point_labels.size() == 128);
    }
  }

  TEST_CASE("checkpoint: bit-exact round trip, truncation rejected") {
    NetworkShape shape;
    shape.num_classes = 3;
    shape.point_widths = {4, 8};
    shape.global_width = 16;
    shape.sup_widths = {8};
    shape.ssl_widths = {8};
    Model<float> m(shape);
    m.init_glorot(4);
    const auto bytes = serialize_checkpoint(m);
    const Model<float> back = deserialize_checkpoint(bytes);
    CHECK(back.shape() == shape);
    CHECK(back.params() == m.params());
    CHECK(serialize_checkpoint(back) == bytes);
    for (std::size_t cut : {std::size_t{0}, std::size_t{10}, bytes.size() - 1}) {
      const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
      CHECK_THROWS_AS(deserialize_checkpoint(part), DataError);
    }
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(deserialize_checkpoint(flipped), DataError);

    const fs::path dir = test::temp_dir("io_ckpt");
    save_checkpoint(dir / "m.ckpt", m);
    CHECK(load_checkpoint(dir / "m.ckpt").params() == m.params());
    for (const auto& e : fs::directory_iterator(dir)) CHECK(e.path().filename() == "m.ckpt");
  }

  TEST_CASE("atomic writes, append and the directory lock") {
    const fs::path dir = test::temp_dir("io_fs");
    atomic_write(dir / "f.txt", std::string("one"));
    atomic_write(dir / "f.txt", std::string("two"));
    CHECK(read_text(dir / "f.txt") == "two");
    append_line(dir / "log", "a");
    append_line(dir / "log", "b");
    CHECK(read_text(dir / "log") == "a\nb\n");
    {
      DirectoryLock lock(dir);
      CHECK(fs::exists(dir / ".lock"));
      CHECK_THROWS_AS(DirectoryLock{dir}, DataError);
    }
    CHECK(!fs::exists(dir / ".lock"));
    const std::string abc = "abc";
    CHECK(fnv1a64(reinterpret_cast<const std::uint8_t*>(abc.data()), 3) == 0xe71fa2190541574bULL);
  }
}
