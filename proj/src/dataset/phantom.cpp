#include "lumbarseg/dataset/phantom.hpp"

#include <cmath>
#include <random>

#include "lumbarseg/dataset/volume_io.hpp"

namespace lumbarseg::data {

namespace {

struct Ellipsoid {
  Vec3 center;
  Vec3 radii;
};

bool inside(const Ellipsoid& e, double z, double y, double x) {
  const Vec3 d = (Vec3(z, y, x) - e.center).cwiseQuotient(e.radii);
  return d.squaredNorm() <= 1.0;
}

// Rasterizes `e` into `image` (and `labels` when label != 0) over its bounding
// voxel range only.
void stamp(const Ellipsoid& e, float intensity, std::uint8_t label, Volume& image,
           LabelVolume* labels) {
  Extents lo, hi;
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<Index>(0, static_cast<Index>(std::floor(e.center[a] - e.radii[a])));
    hi[a] = std::min<Index>(image.extents[a] - 1, static_cast<Index>(std::ceil(e.center[a] + e.radii[a])));
  }
  for (Index z = lo[0]; z <= hi[0]; ++z) {
    for (Index y = lo[1]; y <= hi[1]; ++y) {
      for (Index x = lo[2]; x <= hi[2]; ++x) {
        if (!inside(e, double(z), double(y), double(x))) continue;
        image(z, y, x) = intensity;
        if (labels != nullptr) (*labels)(z, y, x) = label;
      }
    }
  }
}

void require(bool ok, const std::string& what) {
  if (!ok) throw SpecError("phantom spec: " + what);
}

}  // namespace

void PhantomSpec::validate() const {
  require(vertebra_count >= 1 && vertebra_count <= kMaxLabel, "vertebra_count must be in 1..5");
  require(distractor_count >= 0, "distractor_count must be >= 0");
  for (Index e : extents) require(e >= 1, "extents must be >= 1");
  require((spacing_mm.array() > 0.0).all(), "spacing must be positive");
  require(noise_level >= 0.0, "noise_level must be >= 0");
  require(depth_radius_min >= 1.0 && depth_radius_min <= depth_radius_max, "bad depth radius range");
  require(inplane_radius_min >= 1.0 && inplane_radius_min <= inplane_radius_max, "bad in-plane radius range");
  require(gap_min >= 1.0 && gap_min <= gap_max, "bad gap range");
  require(fov_top_min >= 0.0 && fov_top_min <= fov_top_max, "bad fov_top range");
  require(fov_inplane_jitter >= 0.0 && lateral_drift >= 0.0, "jitter must be >= 0");
  require(distractor_scale > 0.0, "distractor_scale must be positive");
  require(vertebra_intensity - intensity_jitter > std::max(tissue_intensity, 0.0),
          "vertebrae must be brighter than soft tissue");

  require(depth_growth >= 0.0 && inplane_growth >= 0.0, "growth must be >= 0");
  const double n = vertebra_count;
  const double stack = n * 2.0 * depth_radius_max + n * (n - 1) * depth_growth + (n - 1) * gap_max;
  require(fov_top_max + stack + 1.0 <= static_cast<double>(extents[0]),
          "depth extent " + std::to_string(extents[0]) + " too small for a stack of up to " +
              std::to_string(stack) + " voxels below depth " + std::to_string(fov_top_max));
  const double reach = fov_inplane_jitter + lateral_drift + inplane_radius_max + (n - 1) * inplane_growth + 1.0;
  for (int a = 1; a < 3; ++a) {
    require(static_cast<double>(extents[a]) / 2.0 - reach >= 0.0,
            "in-plane extent " + std::to_string(extents[a]) + " too small for the vertebra radius");
  }
}

KvDocument PhantomSpec::to_document() const {
  KvDocument d;
  d.set("seed", std::to_string(seed));
  d.set("vertebra_count", std::to_string(vertebra_count));
  d.set("extents", std::to_string(extents[0]) + " " + std::to_string(extents[1]) + " " +
                       std::to_string(extents[2]));
  d.set("spacing", format_doubles(spacing_mm.data(), 3));
  d.set("noise_level", format_double(noise_level));
  d.set("depth_radius", format_double(depth_radius_min) + " " + format_double(depth_radius_max));
  d.set("inplane_radius", format_double(inplane_radius_min) + " " + format_double(inplane_radius_max));
  d.set("gap", format_double(gap_min) + " " + format_double(gap_max));
  d.set("vertebra_intensity", format_double(vertebra_intensity));
  d.set("intensity_jitter", format_double(intensity_jitter));
  d.set("lateral_drift", format_double(lateral_drift));
  d.set("fov_top", format_double(fov_top_min) + " " + format_double(fov_top_max));
  d.set("fov_inplane_jitter", format_double(fov_inplane_jitter));
  d.set("distractor_count", std::to_string(distractor_count));
  d.set("distractor_scale", format_double(distractor_scale));
  d.set("distractor_intensity", format_double(distractor_intensity));
  d.set("depth_growth", format_double(depth_growth));
  d.set("inplane_growth", format_double(inplane_growth));
  d.set("base_block", base_block ? "1" : "0");
  d.set("base_intensity", format_double(base_intensity));
  d.set("tissue_intensity", format_double(tissue_intensity));
  d.set("tissue_radius", format_double(tissue_radius));
  return d;
}

PhantomSpec PhantomSpec::from_document(const KvDocument& d) {
  PhantomSpec s;
  auto range = [&](const char* key, double& lo, double& hi) {
    if (!d.contains(key)) return;
    const auto v = d.get_doubles(key);
    if (v.size() != 2) {
      throw SpecError(std::string("phantom spec: key '") + key + "' at byte offset " +
                      std::to_string(d.offset_of(key)) + " needs two numbers");
    }
    lo = v[0];
    hi = v[1];
  };
  s.seed = static_cast<std::uint64_t>(d.get_int_or("seed", static_cast<long long>(s.seed)));
  s.vertebra_count = static_cast<int>(d.get_int_or("vertebra_count", s.vertebra_count));
  if (d.contains("extents")) {
    const auto e = d.get_ints("extents");
    if (e.size() != 3) throw SpecError("phantom spec: extents needs three integers");
    s.extents = {e[0], e[1], e[2]};
  }
  if (d.contains("spacing")) {
    const auto v = d.get_doubles("spacing");
    if (v.size() != 3) throw SpecError("phantom spec: spacing needs three numbers");
    s.spacing_mm = Vec3(v[0], v[1], v[2]);
  }
  s.noise_level = d.get_double_or("noise_level", s.noise_level);
  range("depth_radius", s.depth_radius_min, s.depth_radius_max);
  range("inplane_radius", s.inplane_radius_min, s.inplane_radius_max);
  range("gap", s.gap_min, s.gap_max);
  s.vertebra_intensity = d.get_double_or("vertebra_intensity", s.vertebra_intensity);
  s.intensity_jitter = d.get_double_or("intensity_jitter", s.intensity_jitter);
  s.lateral_drift = d.get_double_or("lateral_drift", s.lateral_drift);
  range("fov_top", s.fov_top_min, s.fov_top_max);
  s.fov_inplane_jitter = d.get_double_or("fov_inplane_jitter", s.fov_inplane_jitter);
  s.distractor_count = static_cast<int>(d.get_int_or("distractor_count", s.distractor_count));
  s.distractor_scale = d.get_double_or("distractor_scale", s.distractor_scale);
  s.distractor_intensity = d.get_double_or("distractor_intensity", s.distractor_intensity);
  s.depth_growth = d.get_double_or("depth_growth", s.depth_growth);
  s.inplane_growth = d.get_double_or("inplane_growth", s.inplane_growth);
  s.base_block = d.get_int_or("base_block", s.base_block ? 1 : 0) != 0;
  s.base_intensity = d.get_double_or("base_intensity", s.base_intensity);
  s.tissue_intensity = d.get_double_or("tissue_intensity", s.tissue_intensity);
  s.tissue_radius = d.get_double_or("tissue_radius", s.tissue_radius);
  return s;
}

Phantom gen_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform = [&rng](double lo, double hi) {
    return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  const double axis_y = static_cast<double>(spec.extents[1] - 1) / 2.0 +
                        uniform(-spec.fov_inplane_jitter, spec.fov_inplane_jitter);
  const double axis_x = static_cast<double>(spec.extents[2] - 1) / 2.0 +
                        uniform(-spec.fov_inplane_jitter, spec.fov_inplane_jitter);
  const double top = uniform(spec.fov_top_min, spec.fov_top_max);

  std::vector<Ellipsoid> vertebrae;
  double cursor = top;  // depth of the next body's superior surface
  for (int i = 0; i < spec.vertebra_count; ++i) {
    Ellipsoid e;
    const double grow_d = i * spec.depth_growth, grow_p = i * spec.inplane_growth;
    e.radii = Vec3(uniform(spec.depth_radius_min, spec.depth_radius_max) + grow_d,
                   uniform(spec.inplane_radius_min, spec.inplane_radius_max) + grow_p,
                   uniform(spec.inplane_radius_min, spec.inplane_radius_max) + grow_p);
    e.center = Vec3(cursor + e.radii[0], axis_y + uniform(-spec.lateral_drift, spec.lateral_drift),
                    axis_x + uniform(-spec.lateral_drift, spec.lateral_drift));
    cursor = e.center[0] + e.radii[0] + uniform(spec.gap_min, spec.gap_max);
    vertebrae.push_back(e);
  }
  std::vector<float> intensities;
  for (int i = 0; i < spec.vertebra_count; ++i) {
    intensities.push_back(static_cast<float>(
        spec.vertebra_intensity + uniform(-spec.intensity_jitter, spec.intensity_jitter)));
  }

  std::vector<Ellipsoid> distractors;
  double above = top;  // depth of the lowest distractor's inferior surface + gap
  for (int i = 0; i < spec.distractor_count; ++i) {
    Ellipsoid e;
    const double s = spec.distractor_scale;
    e.radii = Vec3(s * uniform(spec.depth_radius_min, spec.depth_radius_max),
                   s * uniform(spec.inplane_radius_min, spec.inplane_radius_max),
                   s * uniform(spec.inplane_radius_min, spec.inplane_radius_max));
    const double gap = uniform(spec.gap_min, spec.gap_max);
    e.center = Vec3(above - gap - e.radii[0], axis_y + uniform(-spec.lateral_drift, spec.lateral_drift),
                    axis_x + uniform(-spec.lateral_drift, spec.lateral_drift));
    above = e.center[0] - e.radii[0];
    distractors.push_back(e);
  }

  Phantom p;
  p.image = Volume(spec.extents, 0.0f, spec.spacing_mm);
  p.labels = p.image.like<std::uint8_t>();

  if (spec.tissue_intensity > 0.0) {
    const double r2 = spec.tissue_radius * spec.tissue_radius;
    for (Index z = 0; z < spec.extents[0]; ++z) {
      for (Index y = 0; y < spec.extents[1]; ++y) {
        for (Index x = 0; x < spec.extents[2]; ++x) {
          const double dy = double(y) - axis_y, dx = double(x) - axis_x;
          if (dy * dy + dx * dx <= r2) p.image(z, y, x) = static_cast<float>(spec.tissue_intensity);
        }
      }
    }
  }
  if (spec.base_block) {
    // Wider than deep, flattened front-to-back; extends past the volume edge
    // when the stack sits low.
    const double top_of_base = cursor;
    Ellipsoid e;
    e.radii = Vec3(3.0 * spec.depth_radius_max, 0.8 * spec.inplane_radius_max,
                   1.4 * spec.inplane_radius_max + spec.vertebra_count * spec.inplane_growth);
    e.center = Vec3(top_of_base + e.radii[0], axis_y, axis_x);
    stamp(e, static_cast<float>(spec.base_intensity), 0, p.image, nullptr);
  }
  for (const auto& e : distractors) {
    stamp(e, static_cast<float>(spec.distractor_intensity), 0, p.image, nullptr);
  }
  for (std::size_t i = 0; i < vertebrae.size(); ++i) {
    stamp(vertebrae[i], intensities[i], static_cast<std::uint8_t>(i + 1), p.image, &p.labels);
  }

  if (spec.noise_level > 0.0) {
    std::normal_distribution<double> noise(0.0, spec.noise_level);
    for (auto& v : p.image.values) v = static_cast<float>(v + noise(rng));
  }
  p.box = tight_box(p.labels);
  return p;
}

void save_phantom(const Phantom& phantom, const std::filesystem::path& directory,
                  const std::string& stem) {
  save_volume(phantom.image, directory / (stem + ".hdr"));
  save_labels(phantom.labels, directory / (stem + "_labels.hdr"));
  save_box(phantom.box, directory / (stem + "_box.txt"));
}

Phantom load_phantom(const std::filesystem::path& directory, const std::string& stem) {
  Phantom p;
  p.image = load_volume(directory / (stem + ".hdr"));
  p.labels = load_labels(directory / (stem + "_labels.hdr"));
  p.box = load_box(directory / (stem + "_box.txt"));
  if (!p.image.same_geometry(p.labels)) {
    throw FormatError(stem + ": image and label geometry differ");
  }
  return p;
}

}  // namespace lumbarseg::data
