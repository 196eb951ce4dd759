#include "hdgt/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <vector>

#include "hdgt/errors.hpp"
#include "hdgt/rng.hpp"
#include "hdgt/tensor_io.hpp"

namespace hdgt {

namespace {

constexpr double kPlaneZ = 10.0;
constexpr double kBaseSpacing = 2.0;    // world units between texture lattice knots
// Low-contrast consistent texture: view-consistent surfaces should look close
// to uniform next to the high-contrast inconsistent regions, the same way
// matte walls sit next to glare in the motivating capture conditions.
constexpr double kBaseAmplitude = 0.05;  // colors in 0.5 +/- amplitude
constexpr double kSingSpacing = 0.8;    // finer, higher-contrast re-texture
constexpr double kSingAmplitude = 0.5;
// Singular cores are inset from their token cell so the world rectangle still
// projects inside the same cell in every view (the rig's extreme cameras
// shift plane points by at most ~0.8 px against the centered reference).
constexpr double kInsetPx = 1.0;

// Key-stream tags so every random decision draws from its own channel.
enum : std::uint64_t {
  kTagBaseTex = 1,
  kTagSingTex = 2,
  kTagSingCount = 3,
  kTagSingCells = 4,
  kTagBoxes = 5,
};

struct WorldRect {
  double x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  bool overlaps(const WorldRect& o, double margin) const {
    return x0 - margin < o.x1 && o.x0 < x1 + margin && y0 - margin < o.y1 &&
           o.y0 < y1 + margin;
  }
  bool contains(double x, double y) const {
    return x >= x0 && x <= x1 && y >= y0 && y <= y1;
  }
};

struct BoxObj {
  WorldRect rect;
  double top_z = kPlaneZ;
};

struct Layout {
  std::vector<std::pair<std::size_t, std::size_t>> singular_cells;  // (row, col)
  std::vector<WorldRect> singular_rects;
  std::vector<BoxObj> boxes;
};

std::uint64_t as_key(std::int64_t v) { return static_cast<std::uint64_t>(v); }

// Piecewise-bilinear value noise over world (x, y); smooth at lattice scale,
// deterministic in the key prefix.
double value_noise(std::uint64_t seed, std::uint64_t tag, std::uint64_t k1,
                   std::uint64_t k2, std::size_t channel, double x, double y,
                   double spacing, double amplitude) {
  const double u = x / spacing, v = y / spacing;
  const auto iu = static_cast<std::int64_t>(std::floor(u));
  const auto iv = static_cast<std::int64_t>(std::floor(v));
  const double fu = u - std::floor(u), fv = v - std::floor(v);
  const auto knot = [&](std::int64_t a, std::int64_t b) {
    return hash_unit({seed, tag, k1, k2, as_key(a), as_key(b), channel});
  };
  const double mixed = (1 - fv) * ((1 - fu) * knot(iu, iv) + fu * knot(iu + 1, iv)) +
                       fv * ((1 - fu) * knot(iu, iv + 1) + fu * knot(iu + 1, iv + 1));
  return 0.5 + amplitude * (2.0 * mixed - 1.0);
}

// World rect on the plane covered by pixel-center range [u0, u1] x [v0, v1]
// of the canonical (centered, untranslated) camera at the layout resolution.
WorldRect rect_from_pixels(const SceneConfig& cfg, double u0, double u1, double v0,
                           double v1) {
  const double f = static_cast<double>(cfg.height);
  const double cx = (static_cast<double>(cfg.width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(cfg.height) - 1.0) / 2.0;
  return WorldRect{(u0 - cx) / f * kPlaneZ, (u1 - cx) / f * kPlaneZ,
                   (v0 - cy) / f * kPlaneZ, (v1 - cy) / f * kPlaneZ};
}

Layout build_layout(const SceneConfig& cfg, std::uint64_t seed) {
  Layout layout;
  const std::size_t gh = cfg.height / cfg.patch, gw = cfg.width / cfg.patch;
  const std::size_t total = gh * gw;

  // floor(fraction * total) cells, plus one with probability equal to the
  // fractional remainder, so the expected count matches the fraction.
  const double target = cfg.singularity_fraction * static_cast<double>(total);
  std::size_t count = static_cast<std::size_t>(std::floor(target));
  const double remainder = target - std::floor(target);
  if (remainder > 0.0 && hash_unit({seed, kTagSingCount}) < remainder) ++count;
  count = std::min(count, total);

  Rng cell_rng(hash_keys({seed, kTagSingCells}));
  std::set<std::size_t> chosen;
  while (chosen.size() < count) chosen.insert(cell_rng.below(total));
  const double p = static_cast<double>(cfg.patch);
  for (std::size_t id : chosen) {
    const std::size_t tr = id / gw, tc = id % gw;
    layout.singular_cells.emplace_back(tr, tc);
    layout.singular_rects.push_back(rect_from_pixels(
        cfg, static_cast<double>(tc) * p + kInsetPx,
        static_cast<double>(tc) * p + (p - 1.0) - kInsetPx,
        static_cast<double>(tr) * p + kInsetPx,
        static_cast<double>(tr) * p + (p - 1.0) - kInsetPx));
  }

  Rng box_rng(hash_keys({seed, kTagBoxes}));
  for (std::size_t b = 0; b < cfg.box_count; ++b) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      const double cx = box_rng.uniform(-3.5, 3.5);
      const double cy = box_rng.uniform(-3.5, 3.5);
      const double hx = box_rng.uniform(0.4, 0.9);
      const double hy = box_rng.uniform(0.4, 0.9);
      const double height = box_rng.uniform(0.2, 0.7);
      const WorldRect rect{cx - hx, cx + hx, cy - hy, cy + hy};
      bool ok = true;
      for (const WorldRect& s : layout.singular_rects)
        if (rect.overlaps(s, 0.3)) ok = false;
      for (const BoxObj& other : layout.boxes)
        if (rect.overlaps(other.rect, 0.15)) ok = false;
      if (ok) {
        layout.boxes.push_back(BoxObj{rect, kPlaneZ - height});
        break;
      }
    }
  }
  return layout;
}

Camera rig_camera(std::size_t view, std::size_t n_views, double baseline_frac,
                  std::size_t height, std::size_t width) {
  const double span = baseline_frac * kPlaneZ;
  const double cxw = n_views == 1 ? 0.0
                                  : -span / 2.0 + span * static_cast<double>(view) /
                                                      static_cast<double>(n_views - 1);
  // Keep the centers on a circle of radius kPlaneZ about the plane's center
  // point, so every camera is at the same distance from it (a shallow arc).
  const double czw = kPlaneZ - std::sqrt(kPlaneZ * kPlaneZ - cxw * cxw);
  Camera cam;
  cam.fx = cam.fy = static_cast<double>(height);
  cam.cx = (static_cast<double>(width) - 1.0) / 2.0;
  cam.cy = (static_cast<double>(height) - 1.0) / 2.0;
  cam.rotation = Eigen::Matrix3d::Identity();
  cam.translation = Eigen::Vector3d(-cxw, 0.0, -czw);
  return cam;
}

// First positive ray parameter at which o + t*dir enters the box, or a
// negative value when the ray misses. dir.z() is always 1 here.
double ray_box_hit(const Eigen::Vector3d& o, const Eigen::Vector3d& dir,
                   const BoxObj& box) {
  double tlo = 0.0, thi = 1e30;
  const double bounds[3][2] = {{box.rect.x0, box.rect.x1},
                               {box.rect.y0, box.rect.y1},
                               {box.top_z, kPlaneZ}};
  for (int axis = 0; axis < 3; ++axis) {
    const double d = dir(axis), origin = o(axis);
    if (std::abs(d) < 1e-15) {
      if (origin < bounds[axis][0] || origin > bounds[axis][1]) return -1.0;
      continue;
    }
    double t0 = (bounds[axis][0] - origin) / d;
    double t1 = (bounds[axis][1] - origin) / d;
    if (t0 > t1) std::swap(t0, t1);
    tlo = std::max(tlo, t0);
    thi = std::min(thi, t1);
  }
  return (tlo <= thi && thi > 0.0) ? tlo : -1.0;
}

}  // namespace

void validate_scene_config(const SceneConfig& cfg) {
  if (cfg.n_views < 2) {
    throw ConfigError("scene config: n_views must be >= 2, got " +
                      std::to_string(cfg.n_views));
  }
  if (cfg.patch == 0) throw ConfigError("scene config: patch must be positive");
  if (cfg.height == 0 || cfg.height % cfg.patch != 0) {
    throw ConfigError("scene config: height " + std::to_string(cfg.height) +
                      " must be a positive multiple of patch " + std::to_string(cfg.patch));
  }
  if (cfg.width == 0 || cfg.width % cfg.patch != 0) {
    throw ConfigError("scene config: width " + std::to_string(cfg.width) +
                      " must be a positive multiple of patch " + std::to_string(cfg.patch));
  }
  if (!(cfg.singularity_fraction >= 0.0 && cfg.singularity_fraction <= 0.5)) {
    throw ConfigError("scene config: singularity_fraction must lie in [0, 0.5], got " +
                      std::to_string(cfg.singularity_fraction));
  }
  if (!(cfg.baseline_frac >= 0.0 && cfg.baseline_frac <= 0.5)) {
    throw ConfigError("scene config: baseline_frac must lie in [0, 0.5], got " +
                      std::to_string(cfg.baseline_frac));
  }
  if (cfg.box_count > 16) {
    throw ConfigError("scene config: box_count must be <= 16, got " +
                      std::to_string(cfg.box_count));
  }
}

SceneBundle render_at_resolution(const SceneConfig& cfg, std::uint64_t seed,
                                 std::size_t height, std::size_t width) {
  validate_scene_config(cfg);
  if (height % cfg.patch != 0 || width % cfg.patch != 0) {
    throw ConfigError("render resolution " + std::to_string(width) + "x" +
                      std::to_string(height) + " must be a multiple of patch " +
                      std::to_string(cfg.patch));
  }
  const Layout layout = build_layout(cfg, seed);

  SceneBundle bundle;
  bundle.seed = seed;
  bundle.config = cfg;

  // Token mask at the rendered grid: a cell is singular when its footprint
  // on the plane overlaps a singular core.
  const std::size_t gh = height / cfg.patch, gw = width / cfg.patch;
  Tensor mask({gh, gw});
  {
    // Footprints use the canonical pixel->plane map at the *render* size.
    SceneConfig render_like = cfg;
    render_like.height = height;
    render_like.width = width;
    const double p = static_cast<double>(cfg.patch);
    for (std::size_t tr = 0; tr < gh; ++tr) {
      for (std::size_t tc = 0; tc < gw; ++tc) {
        const WorldRect cell = rect_from_pixels(
            render_like, static_cast<double>(tc) * p, static_cast<double>(tc) * p + p - 1.0,
            static_cast<double>(tr) * p, static_cast<double>(tr) * p + p - 1.0);
        for (const WorldRect& s : layout.singular_rects) {
          if (cell.overlaps(s, 0.0)) {
            mask(tr, tc) = 1.0;
            break;
          }
        }
      }
    }
  }

  for (std::size_t v = 0; v < cfg.n_views; ++v) {
    const Camera cam = rig_camera(v, cfg.n_views, cfg.baseline_frac, height, width);
    const Eigen::Vector3d center = -cam.translation;
    Tensor img({height, width, 3});
    Tensor depth({height, width});
    for (std::size_t r = 0; r < height; ++r) {
      for (std::size_t c = 0; c < width; ++c) {
        const Eigen::Vector3d dir((static_cast<double>(c) - cam.cx) / cam.fx,
                                  (static_cast<double>(r) - cam.cy) / cam.fy, 1.0);
        double t = kPlaneZ - center.z();
        int hit_box = -1;
        for (std::size_t b = 0; b < layout.boxes.size(); ++b) {
          const double tb = ray_box_hit(center, dir, layout.boxes[b]);
          if (tb > 0.0 && tb < t) {
            t = tb;
            hit_box = static_cast<int>(b);
          }
        }
        const Eigen::Vector3d point = center + t * dir;
        depth(r, c) = t;  // dir.z == 1, so t is the camera-frame z

        int sing = -1;
        if (hit_box < 0) {
          for (std::size_t s = 0; s < layout.singular_rects.size(); ++s) {
            if (layout.singular_rects[s].contains(point.x(), point.y())) {
              sing = static_cast<int>(s);
              break;
            }
          }
        }
        for (std::size_t q = 0; q < 3; ++q) {
          if (sing >= 0) {
            // Independently re-randomized texture per view: the appearance
            // changes between views, the geometry does not.
            img(r, c, q) =
                value_noise(seed, kTagSingTex, static_cast<std::uint64_t>(sing),
                            v + 1, q, point.x(), point.y(), kSingSpacing,
                            kSingAmplitude);
          } else {
            img(r, c, q) = value_noise(seed, kTagBaseTex, 0, 0, q, point.x(),
                                       point.y(), kBaseSpacing, kBaseAmplitude);
          }
        }
      }
    }
    bundle.views.push_back(std::move(img));
    bundle.depths.push_back(std::move(depth));
    bundle.cameras.push_back(cam);
    bundle.singularity_masks.push_back(mask);
  }
  return bundle;
}

SceneBundle generate_scene(const SceneConfig& cfg, std::uint64_t seed) {
  return render_at_resolution(cfg, seed, cfg.height, cfg.width);
}

void save_scene(const std::string& dir, const SceneBundle& bundle) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const auto name = [&](const char* stem, std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
    return (fs::path(dir) / buf).string();
  };
  for (std::size_t v = 0; v < bundle.views.size(); ++v) {
    save_ppm(name("view", v, "ppm"), bundle.views[v]);
    save_tensor(name("depth", v, "hdt"), bundle.depths[v]);
    save_camera(name("camera", v, "txt"), bundle.cameras[v]);
    save_pgm_mask(name("gtmask", v, "pgm"), bundle.singularity_masks[v]);
  }
  nlohmann::json meta;
  meta["n_views"] = bundle.config.n_views;
  meta["height"] = bundle.config.height;
  meta["width"] = bundle.config.width;
  meta["patch"] = bundle.config.patch;
  meta["seed"] = bundle.seed;
  meta["singularity_fraction"] = bundle.config.singularity_fraction;
  meta["baseline_frac"] = bundle.config.baseline_frac;
  meta["box_count"] = bundle.config.box_count;
  std::ofstream os((fs::path(dir) / "meta.json").string(), std::ios::trunc);
  if (!os) throw MissingArtifactError("cannot write meta.json in " + dir);
  os << meta.dump(2) << "\n";
}

SceneBundle load_scene(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "meta.json").string();
  std::ifstream is(meta_path);
  if (!is) throw MissingArtifactError("cannot open " + meta_path);
  nlohmann::json meta;
  try {
    is >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed meta.json in " + dir + ": " + e.what());
  }
  SceneBundle bundle;
  try {
    bundle.config.n_views = meta.at("n_views").get<std::size_t>();
    bundle.config.height = meta.at("height").get<std::size_t>();
    bundle.config.width = meta.at("width").get<std::size_t>();
    bundle.config.patch = meta.at("patch").get<std::size_t>();
    bundle.config.singularity_fraction = meta.at("singularity_fraction").get<double>();
    bundle.config.baseline_frac = meta.value("baseline_frac", 0.05);
    bundle.config.box_count = meta.value("box_count", std::size_t{2});
    bundle.seed = meta.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("meta.json in " + dir + " is missing fields: " + e.what());
  }
  validate_scene_config(bundle.config);
  const auto name = [&](const char* stem, std::size_t i, const char* ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03zu.%s", stem, i, ext);
    return (fs::path(dir) / buf).string();
  };
  for (std::size_t v = 0; v < bundle.config.n_views; ++v) {
    bundle.views.push_back(load_ppm(name("view", v, "ppm")));
    bundle.depths.push_back(load_tensor(name("depth", v, "hdt")));
    bundle.cameras.push_back(load_camera(name("camera", v, "txt")));
    bundle.singularity_masks.push_back(load_pgm_mask(name("gtmask", v, "pgm")));
  }
  return bundle;
}

}  // namespace hdgt
