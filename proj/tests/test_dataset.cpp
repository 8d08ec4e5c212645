#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "lumbarseg/dataset/augment.hpp"
#include "lumbarseg/dataset/patches.hpp"
#include "lumbarseg/dataset/phantom.hpp"
#include "lumbarseg/dataset/volume_io.hpp"

using namespace lumbarseg;
using namespace lumbarseg::data;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("lumbarseg_test_dataset_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

Volume random_volume(const Extents& e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> n(0.0f, 1.0f);
  Volume v(e, 0.0f, Vec3(1.5, 0.75, 0.8), Vec3(-3.0, 2.0, 10.25));
  for (auto& x : v.values) x = n(rng);
  return v;
}

LabelVolume random_labels(const Extents& e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> u(0, kMaxLabel);
  LabelVolume v(e, 0, Vec3(1.5, 0.75, 0.8), Vec3(-3.0, 2.0, 10.25));
  for (auto& x : v.values) x = static_cast<std::uint8_t>(u(rng));
  return v;
}

// Exhaustive scan, independent of tight_box.
std::array<Index, 6> brute_force_label_range(const LabelVolume& l) {
  std::array<Index, 6> r{1 << 20, 1 << 20, 1 << 20, -1, -1, -1};
  for (Index z = 0; z < l.extents[0]; ++z)
    for (Index y = 0; y < l.extents[1]; ++y)
      for (Index x = 0; x < l.extents[2]; ++x)
        if (l(z, y, x) != 0) {
          r[0] = std::min(r[0], z), r[1] = std::min(r[1], y), r[2] = std::min(r[2], x);
          r[3] = std::max(r[3], z), r[4] = std::max(r[4], y), r[5] = std::max(r[5], x);
        }
  return r;
}

PhantomSpec small_spec(std::uint64_t seed) {
  PhantomSpec s;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("phantom generation is deterministic") {
  const auto a = gen_phantom(small_spec(7));
  const auto b = gen_phantom(small_spec(7));
  CHECK(a.image.values == b.image.values);
  CHECK(a.labels.values == b.labels.values);
  CHECK(a.box.low == b.box.low);
  CHECK(a.box.high == b.box.high);
  const auto c = gen_phantom(small_spec(8));
  CHECK(a.image.values != c.image.values);
}

TEST_CASE("phantom box equals the brute-force tight box of nonzero labels") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    const auto p = gen_phantom(small_spec(seed));
    const auto r = brute_force_label_range(p.labels);
    for (int a = 0; a < 3; ++a) {
      CHECK(p.box.low[a] == static_cast<double>(r[a]) - 0.5);
      CHECK(p.box.high[a] == static_cast<double>(r[3 + a]) + 0.5);
    }
    for (Index z = 0; z < p.labels.extents[0]; ++z)
      for (Index y = 0; y < p.labels.extents[1]; ++y)
        for (Index x = 0; x < p.labels.extents[2]; ++x)
          if (p.labels(z, y, x) != 0) REQUIRE(p.box.contains_voxel(z, y, x));
  }
}

TEST_CASE("phantom labels are 1..5 ordered superior to inferior") {
  const auto p = gen_phantom(small_spec(3));
  std::vector<double> mean_depth(6, 0.0), count(6, 0.0);
  for (Index z = 0; z < p.labels.extents[0]; ++z)
    for (Index y = 0; y < p.labels.extents[1]; ++y)
      for (Index x = 0; x < p.labels.extents[2]; ++x) {
        const int l = p.labels(z, y, x);
        mean_depth[l] += double(z);
        count[l] += 1.0;
      }
  for (int l = 1; l <= 5; ++l) REQUIRE(count[l] > 0.0);
  for (int l = 1; l < 5; ++l) CHECK(mean_depth[l] / count[l] < mean_depth[l + 1] / count[l + 1]);
}

TEST_CASE("noise-free phantom: labeled voxels outshine background outside distractors") {
  auto spec = small_spec(11);
  spec.noise_level = 0.0;
  const auto p = gen_phantom(spec);
  float min_labeled = 1e9f, max_background = -1e9f;
  for (std::size_t i = 0; i < p.image.values.size(); ++i) {
    const float v = p.image.values[i];
    if (p.labels.values[i] != 0) {
      min_labeled = std::min(min_labeled, v);
    } else if (v != static_cast<float>(spec.distractor_intensity) && v != static_cast<float>(spec.base_intensity)) {
      max_background = std::max(max_background, v);
    }
  }
  CHECK(min_labeled > max_background);
}

TEST_CASE("phantom spec validation and serialization") {
  auto spec = small_spec(2);
  spec.extents = {30, 64, 64};
  CHECK_THROWS_AS(gen_phantom(spec), SpecError);
  spec = small_spec(2);
  spec.vertebra_count = 0;
  CHECK_THROWS_AS(gen_phantom(spec), SpecError);

  spec = small_spec(99);
  spec.noise_level = 0.125;
  spec.extents = {100, 66, 70};
  const auto back = PhantomSpec::from_document(KvDocument::parse(spec.to_document().to_string()));
  CHECK(back.seed == 99);
  CHECK(back.noise_level == 0.125);
  CHECK(back.extents == Extents{100, 66, 70});
  CHECK(back.to_document().to_string() == spec.to_document().to_string());
}

TEST_CASE("volume file round trip is bit-exact") {
  const auto dir = scratch_dir("roundtrip");
  const Volume v = random_volume({5, 7, 3}, 4);
  save_volume(v, dir / "v.hdr");
  const Volume w = load_volume(dir / "v.hdr");
  CHECK(w.extents == v.extents);
  CHECK(w.spacing == v.spacing);
  CHECK(w.origin == v.origin);
  CHECK(std::memcmp(w.values.data(), v.values.data(), v.values.size() * sizeof(float)) == 0);

  const LabelVolume l = random_labels({4, 4, 6}, 5);
  save_labels(l, dir / "l.hdr");
  const LabelVolume m = load_labels(dir / "l.hdr");
  CHECK(m.values == l.values);
  CHECK(m.same_geometry(l));

  // Saving the reloaded volume reproduces the same bytes.
  save_volume(w, dir / "w.hdr");
  std::ifstream a(dir / "v.raw", std::ios::binary), b(dir / "w.raw", std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
  CHECK(sa == sb);
}

TEST_CASE("volume loader reports truncation, bad extents and element type") {
  const auto dir = scratch_dir("errors");
  const Volume v = random_volume({4, 4, 4}, 1);
  save_volume(v, dir / "v.hdr");
  std::filesystem::resize_file(dir / "v.raw", 100);
  try {
    load_volume(dir / "v.hdr");
    FAIL("expected a size mismatch");
  } catch (const FormatError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected 256 bytes") != std::string::npos);
    CHECK(msg.find("found 100") != std::string::npos);
  }

  auto rewrite = [&](const std::string& key, const std::string& value) {
    KvDocument doc = KvDocument::load(dir / "v.hdr");
    doc.set(key, value);
    doc.save(dir / "bad.hdr");
    std::filesystem::copy_file(dir / "v.raw", dir / "bad.raw",
                               std::filesystem::copy_options::overwrite_existing);
  };
  rewrite("extents", "0 4 4");
  try {
    load_volume(dir / "bad.hdr");
    FAIL("expected extents rejection");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
  }
  rewrite("element_type", "int16");
  CHECK_THROWS_AS(load_volume(dir / "bad.hdr"), FormatError);

  save_volume(v, dir / "v.hdr");
  CHECK_THROWS_AS(load_labels(dir / "v.hdr"), FormatError);

  std::ofstream(dir / "junk.hdr") << "format=lumbarseg-volume\nthis line is broken\n";
  try {
    load_volume(dir / "junk.hdr");
    FAIL("expected a parse error");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("byte offset 24") != std::string::npos);
  }
}

TEST_CASE("crop keeps physical coordinates and clamps margins") {
  const Volume v = random_volume({6, 8, 5}, 2);
  BoundingBox3D full{Vec3(-0.5, -0.5, -0.5), Vec3(5.5, 7.5, 4.5)};
  const Volume same = crop(v, full, 0);
  CHECK(same.values == v.values);
  CHECK(same.origin == v.origin);

  BoundingBox3D inner{Vec3(1.5, 2.5, 0.5), Vec3(3.5, 5.5, 2.5)};
  const auto region = crop_region(v.extents, inner, 0);
  CHECK(region.begin == Extents{2, 3, 1});
  CHECK(region.end == Extents{4, 6, 3});
  const Volume c = crop(v, region);
  for (Index z = 0; z < 2; ++z)
    for (Index y = 0; y < 3; ++y)
      for (Index x = 0; x < 2; ++x) {
        CHECK(c(z, y, x) == v(z + 2, y + 3, x + 1));
        const Vec3 before = v.physical(Vec3(z + 2, y + 3, x + 1));
        const Vec3 after = c.physical(Vec3(z, y, x));
        CHECK((before - after).norm() < 1e-12);
      }

  const Volume big = crop(v, inner, 100);
  CHECK(big.values == v.values);

  BoundingBox3D outside{Vec3(20, 20, 20), Vec3(30, 30, 30)};
  CHECK_THROWS_AS(crop(v, outside, 0), GeometryError);
}

TEST_CASE("gray value augmentation") {
  const Volume v = random_volume({3, 3, 3}, 9);
  CHECK(gray_value_augment(v, {1.0, 1.0, 0.0, 0.0}, 5).values == v.values);
  GrayAugmentOptions opt;
  CHECK(gray_value_augment(v, opt, 17).values == gray_value_augment(v, opt, 17).values);
  CHECK(gray_value_augment(v, opt, 17).values != gray_value_augment(v, opt, 18).values);
  Volume five({1, 1, 1}, 5.0f);
  CHECK(apply_intensity_affine(five, 2.0, 10.0).values[0] == 20.0f);
}

TEST_CASE("elastic deformation: identity, alphabet and integer shifts") {
  const Volume v = random_volume({12, 10, 9}, 3);
  LabelVolume l = random_labels({12, 10, 9}, 3);
  for (auto& x : l.values) x = x % 3;  // labels {0, 1, 2}

  auto [vi, li] = elastic_deform(v, l, {8, 0.0}, 4);
  CHECK(vi.values == v.values);
  CHECK(li.values == l.values);

  auto [vd, ld] = elastic_deform(v, l, {4, 2.0}, 4);
  CHECK(vd.extents == v.extents);
  std::set<int> before(l.values.begin(), l.values.end()), after(ld.values.begin(), ld.values.end());
  for (int a : after) CHECK(before.count(a) == 1);

  const Vec3 shift(1.0, -2.0, 3.0);
  auto [vs, ls] = apply_deformation(v, l, ControlField::constant(v.extents, 8, shift));
  for (Index z = 0; z < 11; ++z)
    for (Index y = 2; y < 10; ++y)
      for (Index x = 0; x < 6; ++x) {
        CHECK(vs(z, y, x) == doctest::Approx(v(z + 1, y - 2, x + 3)).epsilon(1e-5));
        CHECK(ls(z, y, x) == l(z + 1, y - 2, x + 3));
      }
}

TEST_CASE("roi augmentation jitter bounds") {
  BoundingBox3D box{Vec3(10, 20, 30), Vec3(110, 60, 50)};
  const auto same = roi_augment(box, 0.0, 3);
  CHECK(same.low == box.low);
  CHECK(same.high == box.high);
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    const auto b = roi_augment(box, 0.1, seed);
    CHECK(b.valid());
    CHECK(std::abs(b.low[0] - box.low[0]) <= 10.0);
    CHECK(std::abs(b.high[0] - box.high[0]) <= 10.0);
    CHECK(std::abs(b.low[1] - box.low[1]) <= 4.0);
    const auto wild = roi_augment(box, 3.0, seed);
    CHECK(wild.valid());
  }
}

TEST_CASE("training patches") {
  const Volume v = random_volume({8, 6, 4}, 6);
  const LabelVolume l = random_labels({8, 6, 4}, 6);
  const auto whole = sample_training_patches(v, l, {8, 6, 4}, 3, 1);
  REQUIRE(whole.size() == 3);
  for (const auto& p : whole) {
    CHECK(p.image.values == v.values);
    CHECK(p.labels.values == l.values);
  }

  const auto a = sample_training_patches(v, l, {4, 4, 2}, 20, 9);
  const auto b = sample_training_patches(v, l, {4, 4, 2}, 20, 9);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].start == b[i].start);
    CHECK(a[i].image.values == b[i].image.values);
    for (auto x : a[i].labels.values) CHECK(x <= kMaxLabel);
    // Patch content matches the source at its offset.
    CHECK(a[i].image(1, 2, 1) == v(a[i].start[0] + 1, a[i].start[1] + 2, a[i].start[2] + 1));
  }

  // Larger patch than volume: symmetric zero padding.
  const auto padded = sample_training_patches(v, l, {10, 6, 8}, 1, 2);
  const auto& p = padded[0];
  CHECK(p.start == Extents{0, 0, 0});
  CHECK(p.image(0, 0, 0) == 0.0f);
  CHECK(p.image(1, 0, 2) == v(0, 0, 0));
  CHECK(p.image(8, 5, 5) == v(7, 5, 3));
  CHECK(p.image(9, 5, 7) == 0.0f);
}
