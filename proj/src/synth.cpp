#include "skyfall/synth.hpp"

#include "skyfall/checksum.hpp"
#include "skyfall/config.hpp"
#include "skyfall/errors.hpp"
#include "skyfall/ply.hpp"
#include "skyfall/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <fstream>
#include <numbers>
#include <random>

namespace skyfall {

using nlohmann::json;

void SyntheticSceneSpec::validate() const {
    if (num_gaussians < 10) throw ContractError("synthetic scene needs at least 10 Gaussians");
    if (!(block_size > 0.0) || num_buildings < 0 || num_buildings > 4) {
        throw ContractError("block size must be positive and buildings in [0, 4]");
    }
    if (num_views < 1 || num_heldout < 0 || num_low_views < 0) throw ContractError("bad view counts");
    if (!(elevation_min > 0.0 && elevation_min <= elevation_max && elevation_max < 90.0) ||
        !(low_elevation > 0.0 && low_elevation < 90.0)) {
        throw ContractError("elevations must lie in (0, 90) with min <= max");
    }
    if (!(radius > 0.0) || !(low_radius > 0.0) || !(fov_deg > 0.0 && fov_deg < 180.0) || resolution < 8) {
        throw ContractError("bad radius, field of view or resolution");
    }
    if (dates < 1 || perturb < 0.0 || perturb >= 1.0 || seed_jitter < 0.0) {
        throw ContractError("dates must be >= 1 and perturbation in [0, 1)");
    }
}

namespace {

constexpr double kMaxSigma = 4.2; // keeps the largest covariance eigenvalue under the prune bound
// Above 0.5 so the entropy term pushes fresh points towards opaque rather than transparent.
constexpr double kSeedOpacity = 0.7;

struct Box {
    Vec2 center;
    Vec2 half;
    double height;
    Vec3 color;
};

struct Surface {
    Vec3 origin; // corner
    Vec3 u, v;   // edge vectors spanning the face
    Vec3 normal;
    double weight;
    Vec3 color;
    int kind; // 0 ground, 1 roof, 2 wall
};

Vec4 quat_from_matrix(const Mat3& r) {
    Eigen::Quaterniond q(r);
    q.normalize();
    return Vec4(q.w(), q.x(), q.y(), q.z());
}

// Rotation whose local z axis is `normal`, with in-plane angle `theta`.
Vec4 surface_rotation(const Vec3& normal, double theta) {
    Vec3 t = std::abs(normal.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
    Vec3 a = t.cross(normal).normalized();
    Vec3 b = normal.cross(a);
    Mat3 r;
    r.col(0) = std::cos(theta) * a + std::sin(theta) * b;
    r.col(1) = -std::sin(theta) * a + std::cos(theta) * b;
    r.col(2) = normal;
    return quat_from_matrix(r);
}

bool inside_any(const std::vector<Box>& boxes, double x, double y) {
    for (const Box& b : boxes) {
        if (std::abs(x - b.center.x()) < b.half.x() && std::abs(y - b.center.y()) < b.half.y()) return true;
    }
    return false;
}

Vec3 ground_color(double x, double y) {
    if (std::abs(x) < 4.0 || std::abs(y) < 4.0) return {0.55, 0.55, 0.52}; // roads
    const bool park = (x > 0) != (y > 0);
    return park ? Vec3(0.25, 0.5, 0.2) : Vec3(0.45, 0.4, 0.33);
}

// Best-candidate sampling: spreads `count` points evenly over the face.
std::vector<Vec2> spread_points(int count, double aspect, std::mt19937_64& rng,
                                const std::function<bool(double, double)>& reject) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Vec2> pts;
    for (int i = 0; i < count; ++i) {
        Vec2 best(0.5, 0.5);
        double best_d = -1.0;
        for (int c = 0; c < 12; ++c) {
            Vec2 p;
            int guard = 0;
            do {
                p = Vec2(u(rng), u(rng));
            } while (reject(p.x(), p.y()) && ++guard < 64);
            double d = 1e30;
            for (const Vec2& q : pts) {
                const Vec2 diff((p.x() - q.x()) * aspect, p.y() - q.y());
                d = std::min(d, diff.squaredNorm());
            }
            if (d > best_d) {
                best_d = d;
                best = p;
            }
        }
        pts.push_back(best);
    }
    return pts;
}

Vec3 color_to_dc(const Vec3& c) { return (c.array() - 0.5) / kShC0; }

GaussianCloud build_ground_truth(const SyntheticSceneSpec& spec, std::mt19937_64& rng) {
    const double half = spec.block_size / 2.0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const Vec3 palette[4] = {{0.75, 0.3, 0.25}, {0.85, 0.85, 0.8}, {0.3, 0.35, 0.65}, {0.65, 0.6, 0.3}};
    const Vec2 quadrant[4] = {{1, 1}, {-1, 1}, {-1, -1}, {1, -1}};

    std::vector<Box> boxes;
    for (int b = 0; b < spec.num_buildings; ++b) {
        Box box;
        box.center = quadrant[b] * (half / 2.0) + Vec2(u(rng) - 0.5, u(rng) - 0.5) * (half * 0.15);
        box.half = Vec2(0.1 + 0.08 * u(rng), 0.1 + 0.08 * u(rng)) * half;
        box.height = (0.15 + 0.3 * u(rng)) * half;
        box.color = palette[b];
        boxes.push_back(box);
    }

    std::vector<Surface> faces;
    double roof_area = 0.0;
    for (const Box& b : boxes) roof_area += 4.0 * b.half.x() * b.half.y();
    faces.push_back({Vec3(-half, -half, 0), Vec3(spec.block_size, 0, 0), Vec3(0, spec.block_size, 0), Vec3(0, 0, 1),
                     spec.block_size * spec.block_size - roof_area, Vec3::Zero(), 0});
    for (const Box& b : boxes) {
        const Vec3 lo(b.center.x() - b.half.x(), b.center.y() - b.half.y(), 0.0);
        const double wx = 2 * b.half.x(), wy = 2 * b.half.y(), h = b.height;
        faces.push_back({lo + Vec3(0, 0, h), Vec3(wx, 0, 0), Vec3(0, wy, 0), Vec3(0, 0, 1), wx * wy, b.color, 1});
        // Walls count at a quarter of their area: steep views barely see them.
        const Vec3 wall = b.color * 0.6;
        faces.push_back({lo, Vec3(wx, 0, 0), Vec3(0, 0, h), Vec3(0, -1, 0), 0.25 * wx * h, wall, 2});
        faces.push_back({lo + Vec3(0, wy, 0), Vec3(wx, 0, 0), Vec3(0, 0, h), Vec3(0, 1, 0), 0.25 * wx * h, wall, 2});
        faces.push_back({lo, Vec3(0, wy, 0), Vec3(0, 0, h), Vec3(-1, 0, 0), 0.25 * wy * h, wall, 2});
        faces.push_back({lo + Vec3(wx, 0, 0), Vec3(0, wy, 0), Vec3(0, 0, h), Vec3(1, 0, 0), 0.25 * wy * h, wall, 2});
    }

    double total = 0.0;
    for (const Surface& f : faces) total += f.weight;
    std::vector<int> counts(faces.size());
    int assigned = 0;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        counts[i] = std::max(1, static_cast<int>(std::floor(spec.num_gaussians * faces[i].weight / total)));
        assigned += counts[i];
    }
    counts[0] += spec.num_gaussians - assigned; // remainder goes to the ground
    if (counts[0] < 1) throw ContractError("too few Gaussians for the requested buildings");

    std::normal_distribution<double> n(0.0, 1.0);
    GaussianCloud cloud;
    for (std::size_t i = 0; i < faces.size(); ++i) {
        const Surface& f = faces[i];
        const double lu = f.u.norm(), lv = f.v.norm();
        auto reject = [&](double a, double b) {
            if (f.kind != 0) return false;
            const Vec3 p = f.origin + a * f.u + b * f.v;
            return inside_any(boxes, p.x(), p.y());
        };
        const auto pts = spread_points(counts[i], lu / lv, rng, reject);
        const double area = f.kind == 2 ? f.weight * 4.0 : f.weight;
        const double spacing = std::sqrt(area / counts[i]);
        for (const Vec2& p : pts) {
            Gaussian g;
            g.position = f.origin + p.x() * f.u + p.y() * f.v + f.normal * 0.05;
            const double su = std::min(kMaxSigma, std::min(0.6 * spacing, 0.5 * lu));
            const double sv = std::min(kMaxSigma, std::min(0.6 * spacing, 0.5 * lv));
            g.log_scale = Vec3(std::log(std::max(0.3, su)), std::log(std::max(0.3, sv)), std::log(0.15));
            const double theta = f.kind == 2 ? 0.0 : 2.0 * std::numbers::pi * u(rng);
            g.rotation = surface_rotation(f.normal, theta);
            if (f.kind == 2) {
                // Align the in-plane axes with the wall edges.
                Mat3 r;
                r.col(0) = f.u.normalized();
                r.col(1) = f.normal.cross(f.u.normalized());
                r.col(2) = f.normal;
                g.log_scale = Vec3(std::log(std::max(0.3, std::min(kMaxSigma, 0.6 * spacing))),
                                   std::log(std::max(0.3, std::min(kMaxSigma, 0.6 * spacing))), std::log(0.15));
                g.rotation = quat_from_matrix(r);
            }
            Vec3 color = f.kind == 0 ? ground_color(g.position.x(), g.position.y()) : f.color;
            color = (color.array() + 0.05 * Eigen::Array3d(n(rng), n(rng), n(rng))).max(0.02).min(0.98);
            g.sh.row(0) = color_to_dc(color).transpose();
            for (int k = 1; k < kShBases; ++k)
                for (int c = 0; c < 3; ++c) g.sh(k, c) = 0.03 * n(rng);
            g.opacity_logit = logit(0.9);
            cloud.gaussians.push_back(g);
        }
    }
    return cloud;
}

GaussianCloud build_seed(const GaussianCloud& truth, double jitter, std::mt19937_64& rng) {
    std::normal_distribution<double> n(0.0, 1.0);
    GaussianCloud seed;
    const std::size_t count = truth.size();
    for (std::size_t i = 0; i < count; ++i) {
        const Gaussian& t = truth.gaussians[i];
        std::vector<double> d2;
        for (std::size_t j = 0; j < count; ++j) {
            if (j != i) d2.push_back((truth.gaussians[j].position - t.position).squaredNorm());
        }
        std::partial_sort(d2.begin(), d2.begin() + std::min<std::size_t>(3, d2.size()), d2.end());
        double mean = 0.0;
        const std::size_t k = std::min<std::size_t>(3, d2.size());
        for (std::size_t m = 0; m < k; ++m) mean += d2[m];
        mean = k > 0 ? mean / static_cast<double>(k) : 1.0;

        Gaussian g;
        g.position = t.position + jitter * Vec3(n(rng), n(rng), n(rng));
        g.log_scale = Vec3::Constant(std::log(std::clamp(std::sqrt(mean), 0.3, kMaxSigma)));
        g.rotation = Vec4(1, 0, 0, 0);
        g.opacity_logit = logit(kSeedOpacity);
        const Vec3 color = (sh_dc_color(t.sh).array() + 0.05 * Eigen::Array3d(n(rng), n(rng), n(rng))).max(0.0).min(1.0);
        g.sh.row(0) = color_to_dc(color).transpose();
        seed.gaussians.push_back(g);
    }
    return seed;
}

Image round_to_float(Image img) {
    for (double& x : img.data) x = static_cast<double>(static_cast<float>(x));
    return img;
}

TrainingImage make_view(const GaussianCloud& truth, const CameraPinhole& cam, const Image* perturbation) {
    TrainingImage t;
    t.camera = cam;
    Image rgb = render(truth, cam).rgb;
    if (perturbation != nullptr) {
        for (std::size_t i = 0; i < rgb.data.size(); ++i) rgb.data[i] *= perturbation->data[i];
    }
    t.image = quantize_8bit(rgb);
    return t;
}

} // namespace

Image ground_truth_depth(const GaussianCloud& cloud, const CameraPinhole& cam) {
    const RenderOutput out = render(cloud, cam);
    Image depth(cam.width, cam.height, 1);
    const Mat3 rt = cam.rotation.transpose();
    const Vec3 c = cam.center();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const double a = out.alpha.at(x, y);
            if (a >= 0.5) {
                depth.at(x, y) = out.depth.at(x, y) / a;
                continue;
            }
            const Vec3 ray_cam((x + 0.5 - cam.cx) / cam.fx, (y + 0.5 - cam.cy) / cam.fy, 1.0);
            const Vec3 ray = rt * ray_cam;
            double z = cam.far;
            if (ray.z() < 0.0) {
                const double t = -c.z() / ray.z();
                if (t > 0.0) z = std::min(t, cam.far);
            }
            depth.at(x, y) = z;
        }
    }
    return depth;
}

Image date_perturbation(const SyntheticSceneSpec& spec, int date, int width, int height) {
    Image f(width, height, 3, 1.0);
    if (spec.perturb == 0.0) return f;
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(date), 0xda7eu};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double tint[3];
    for (double& t : tint) t = u(rng);
    double region[2][2];
    for (auto& row : region)
        for (double& r : row) r = u(rng);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < 3; ++c) {
                const double r = region[2 * y / height][2 * x / width];
                f.at(x, y, c) = 1.0 + spec.perturb * 0.5 * (tint[c] + r);
            }
    return f;
}

SyntheticScene synth_scene(const SyntheticSceneSpec& spec) {
    spec.validate();
    SyntheticScene s;
    s.spec = spec;
    std::mt19937_64 rng(spec.seed);
    s.ground_truth = build_ground_truth(spec, rng);
    s.seed_cloud = build_seed(s.ground_truth, spec.seed_jitter, rng);

    std::uniform_real_distribution<double> u(0.0, 1.0);
    const ViewIntrinsics intr{spec.fov_deg, spec.resolution};
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<Image> perturbations;
    for (int d = 0; d < spec.dates; ++d) {
        perturbations.push_back(date_perturbation(spec, d, spec.resolution, spec.resolution));
    }
    for (int k = 0; k < spec.num_views; ++k) {
        const double az = two_pi * (k + 0.6 * (u(rng) - 0.5)) / spec.num_views;
        const double el = spec.elevation_min + (spec.elevation_max - spec.elevation_min) * u(rng);
        const int date = k % spec.dates;
        TrainingImage t = make_view(s.ground_truth, orbit_camera(Vec3::Zero(), spec.radius, el, az, intr),
                                    &perturbations[date]);
        t.embedding_index = k;
        t.provenance = Provenance::satellite;
        s.train_depth.push_back(round_to_float(ground_truth_depth(s.ground_truth, t.camera)));
        s.train.push_back(std::move(t));
        s.dates.push_back(date);
    }
    for (int k = 0; k < spec.num_heldout; ++k) {
        const double az = two_pi * (k + 0.5) / std::max(1, spec.num_heldout) + 0.1;
        const double el = spec.elevation_min + (spec.elevation_max - spec.elevation_min) * u(rng);
        TrainingImage t = make_view(s.ground_truth, orbit_camera(Vec3::Zero(), spec.radius, el, az, intr), nullptr);
        s.heldout_depth.push_back(round_to_float(ground_truth_depth(s.ground_truth, t.camera)));
        s.heldout.push_back(std::move(t));
    }
    for (int k = 0; k < spec.num_low_views; ++k) {
        const double az = two_pi * k / std::max(1, spec.num_low_views) + 0.2;
        TrainingImage t = make_view(s.ground_truth,
                                    orbit_camera(Vec3::Zero(), spec.low_radius, spec.low_elevation, az, intr), nullptr);
        s.low_depth.push_back(round_to_float(ground_truth_depth(s.ground_truth, t.camera)));
        s.low.push_back(std::move(t));
    }
    return s;
}

std::string dataset_hash(const SyntheticScene& scene) {
    Sha256 h;
    auto add_image = [&](const Image& img) {
        h.update_pod(img.width);
        h.update_pod(img.height);
        h.update_pod(img.channels);
        for (double x : img.data) h.update_pod(x);
    };
    auto add_split = [&](const Dataset& views, const std::vector<Image>& depths) {
        h.update_pod(views.size());
        for (const TrainingImage& t : views) {
            h.update(camera_to_json(t.camera).dump());
            add_image(t.image);
        }
        for (const Image& d : depths) add_image(d);
    };
    add_split(scene.train, scene.train_depth);
    add_split(scene.heldout, scene.heldout_depth);
    add_split(scene.low, scene.low_depth);
    const auto digest = h.finish();
    return to_hex(digest);
}

void write_scene(const std::filesystem::path& dir, const SyntheticScene& scene) {
    if (dir.empty()) throw IoError("write_scene: empty path");
    std::error_code ec;
    std::filesystem::create_directories(dir / "images", ec);
    std::filesystem::create_directories(dir / "depth", ec);
    if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());

    json views = json::array();
    auto add = [&](const Dataset& split, const std::vector<Image>& depths, const std::string& name) {
        for (std::size_t i = 0; i < split.size(); ++i) {
            char stem[64];
            std::snprintf(stem, sizeof stem, "%s_%03zu", name.c_str(), i);
            const std::string img = std::string("images/") + stem + ".png";
            const std::string dep = std::string("depth/") + stem + ".pfm";
            write_png(dir / img, split[i].image);
            write_pfm(dir / dep, depths[i]);
            json v{{"name", stem},       {"split", name}, {"camera", camera_to_json(split[i].camera)},
                   {"image", img},       {"depth", dep},  {"embedding_index", split[i].embedding_index}};
            if (name == "train") v["date"] = scene.dates[i];
            views.push_back(v);
        }
    };
    add(scene.train, scene.train_depth, "train");
    add(scene.heldout, scene.heldout_depth, "heldout");
    add(scene.low, scene.low_depth, "low");
    export_ply(dir / "ground_truth.ply", scene.ground_truth, PlyPrecision::float64);
    export_ply(dir / "seed.ply", scene.seed_cloud, PlyPrecision::float64);

    const json doc{{"format", "skyfall-scene"},
                   {"version", 1},
                   {"spec", synth_spec_to_json(scene.spec)},
                   {"hash", dataset_hash(scene)},
                   {"views", views}};
    std::ofstream f(dir / "scene.json");
    if (!f) throw IoError("cannot write '" + (dir / "scene.json").string() + "'");
    f << doc.dump(2) << '\n';
}

SyntheticScene read_scene(const std::filesystem::path& dir) {
    if (dir.empty()) throw IoError("read_scene: empty path");
    const json doc = load_json_file(dir / "scene.json");
    if (doc.value("format", std::string()) != "skyfall-scene") {
        throw ContractError("'" + dir.string() + "' is not a scene directory");
    }
    if (doc.value("version", 0) > 1) throw VersionError("scene format version is newer than this build");
    SyntheticScene s;
    s.spec = synth_spec_from_json(doc.at("spec"));
    s.ground_truth = import_ply(dir / "ground_truth.ply");
    s.seed_cloud = import_ply(dir / "seed.ply");
    for (const json& v : doc.at("views")) {
        const std::filesystem::path img = dir / v.at("image").get<std::string>();
        const std::filesystem::path dep = dir / v.at("depth").get<std::string>();
        if (!std::filesystem::exists(img)) throw IoError("missing image '" + img.string() + "'");
        TrainingImage t;
        t.camera = camera_from_json(v.at("camera"));
        t.image = read_png(img);
        t.embedding_index = v.value("embedding_index", -1);
        const std::string split = v.at("split").get<std::string>();
        Image depth = read_pfm(dep);
        if (split == "train") {
            s.dates.push_back(v.value("date", 0));
            s.train_depth.push_back(std::move(depth));
            s.train.push_back(std::move(t));
        } else if (split == "heldout") {
            s.heldout_depth.push_back(std::move(depth));
            s.heldout.push_back(std::move(t));
        } else if (split == "low") {
            s.low_depth.push_back(std::move(depth));
            s.low.push_back(std::move(t));
        } else {
            throw ContractError("unknown split '" + split + "'");
        }
    }
    return s;
}

} // namespace skyfall
