// hflow: command-line front end for the homography-flow library.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or data error,
// 3 non-convergence (or an image without texture to align).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hflow/bases.hpp"
#include "hflow/bench.hpp"
#include "hflow/error.hpp"
#include "hflow/fitting.hpp"
#include "hflow/geometry.hpp"
#include "hflow/io.hpp"
#include "hflow/losses.hpp"
#include "hflow/subspace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNonConvergence = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::pair<int, int> parse_size(const std::string& s) {
  int w = 0, h = 0;
  char x = 0, extra = 0;
  if (std::sscanf(s.c_str(), "%d%c%d%c", &w, &x, &h, &extra) != 3 || (x != 'x' && x != 'X')) {
    throw UsageError("size must look like WxH, got '" + s + "'");
  }
  return {w, h};
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json weights_json(const hflow::BasisWeights& w) {
  return json(std::vector<double>(w.alpha.begin(), w.alpha.end()));
}

// Flow residual relative to the flow's norm, in normalized units.
double relative_residual(const hflow::BasisSet& b, const hflow::FlowField& f,
                         const hflow::BasisWeights& w) {
  const hflow::FlowField s = hflow::synthesize(b, w);
  const std::size_t n = f.pixel_count();
  const double sx = b.scale_x(), sy = b.scale_y();
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double fx = f.data()[k] / sx, fy = f.data()[n + k] / sy;
    const double ex = fx - s.data()[k] / sx, ey = fy - s.data()[n + k] / sy;
    num += ex * ex + ey * ey;
    den += fx * fx + fy * fy;
  }
  return den > 0.0 ? std::sqrt(num / den) : 0.0;
}

json loss_json(const hflow::LossReport& r) {
  return {{"triplet_ab", r.triplet_ab}, {"triplet_ba", r.triplet_ba}, {"triplet", r.triplet},
          {"fil_ab", r.fil_ab},         {"fil_ba", r.fil_ba},
          {"inverse_consistency", r.inverse_consistency},
          {"lambda", r.lambda},         {"mu", r.mu},
          {"total", r.total},           {"valid_fraction", r.valid_fraction}};
}

// ---- bases ----------------------------------------------------------------

struct BasesArgs {
  int width = 64;
  int height = 64;
  std::string out = "bases";
};

int run_bases(const BasesArgs& a) {
  if (a.width < 3 || a.height < 3) {
    throw UsageError("--width and --height must be >= 3");
  }
  const hflow::BasisSet b = hflow::build(a.width, a.height);
  fs::create_directories(a.out);
  for (int k = 0; k < hflow::kNumBases; ++k) {
    const hflow::FlowField f = hflow::synthesize(b, hflow::BasisWeights::unit(k));
    const std::string stem = "basis_" + std::to_string(k + 1);
    hflow::io::write_flo(fs::path(a.out) / (stem + ".flo"), f);
    hflow::io::write_ppm(fs::path(a.out) / (stem + ".ppm"), hflow::io::colorize_flow(f));
  }
  const Eigen::MatrixXd gram = b.q().transpose() * b.q();
  const double ortho =
      (gram - Eigen::MatrixXd::Identity(hflow::kNumBases, hflow::kNumBases)).cwiseAbs().maxCoeff();
  json meta{{"width", a.width},
            {"height", a.height},
            {"convention", std::string(b.convention())},
            {"r", matrix_json(b.r())},
            {"norms", std::vector<double>(b.norms().begin(), b.norms().end())}};
  hflow::io::write_text(fs::path(a.out) / "meta.json", meta.dump(2) + "\n");
  std::printf("wrote 8 bases %dx%d to %s\n", a.width, a.height, a.out.c_str());
  std::printf("orthonormality max|QtQ - I| = %.3e\n", ortho);
  return kExitOk;
}

// ---- fit ------------------------------------------------------------------

struct FitArgs {
  std::string flow;
  bool robust = false;
  double delta = 1.0;
  std::string loss = "huber";
  int max_iters = 50;
  std::string size;
  std::string out = "weights.json";
};

int run_fit(const FitArgs& a) {
  const hflow::FlowField f = hflow::io::read_flo(a.flow);
  if (!a.size.empty()) {
    const auto [w, h] = parse_size(a.size);
    if (w != f.width() || h != f.height()) {
      hflow::fail(hflow::ErrorCode::kDimensionMismatch,
                  "flow is " + std::to_string(f.width()) + "x" + std::to_string(f.height()) +
                      ", --bases-size says " + a.size);
    }
  }
  const auto basis = hflow::shared_basis(f.width(), f.height());
  hflow::io::WeightsDoc doc;
  doc.width = f.width();
  doc.height = f.height();
  bool converged = true;
  if (a.robust) {
    hflow::RobustConfig cfg;
    cfg.scale = a.delta;
    cfg.max_iters = a.max_iters;
    if (a.loss == "huber") {
      cfg.loss = hflow::RobustLoss::kHuber;
    } else if (a.loss == "welsch") {
      cfg.loss = hflow::RobustLoss::kWelsch;
    } else {
      throw UsageError("--loss must be huber or welsch");
    }
    const hflow::RobustFit fit = hflow::fit_robust(*basis, f, cfg);
    doc.weights = fit.weights;
    doc.residual = relative_residual(*basis, f, fit.weights);
    converged = fit.converged;
    const fs::path map = fs::path(a.out).parent_path() / "weightmap.pgm";
    hflow::io::write_pgm(map, hflow::GrayImage(f.width(), f.height(), fit.observation_weights));
  } else {
    const hflow::Projection p = hflow::analyze(*basis, f);
    doc.weights = p.weights;
    doc.residual = p.residual;
  }
  hflow::io::write_text(a.out, hflow::io::format_weights(doc));
  if (!converged) {
    std::fprintf(stderr, "hflow fit: IRLS did not converge\n");
    return kExitNonConvergence;
  }
  return kExitOk;
}

// ---- align ----------------------------------------------------------------

struct AlignArgs {
  std::string a, b;
  int levels = 4;
  int iters = 30;
  bool normalized = false;
  std::string out = "align";
};

int run_align(const AlignArgs& args) {
  const hflow::GrayImage a = hflow::io::read_pgm(args.a);
  const hflow::GrayImage b = hflow::io::read_pgm(args.b);
  if (a.width() != b.width() || a.height() != b.height()) {
    hflow::fail(hflow::ErrorCode::kDimensionMismatch, "--a and --b differ in size");
  }
  const auto basis = hflow::shared_basis(a.width(), a.height());
  hflow::AlignConfig cfg;
  cfg.pyramid_levels = args.levels;
  cfg.gn_iters = args.iters;
  cfg.mode = args.normalized ? hflow::PhotometricMode::kNormalized
                             : hflow::PhotometricMode::kMeanSquared;
  const hflow::AlignResult r = hflow::align_direct(a, b, *basis, cfg);

  const fs::path out(args.out);
  fs::create_directories(out);
  const hflow::FlowField flow = hflow::synthesize(*basis, r.weights);
  const auto [warped, mask] = hflow::warp_image(a, flow);
  std::vector<double> diff(a.pixel_count(), 0.0);
  for (std::size_t k = 0; k < diff.size(); ++k) {
    if (mask.values()[k]) diff[k] = std::abs(warped.pixels()[k] - b.pixels()[k]);
  }
  hflow::io::write_text(out / "homography.json", hflow::io::format_homography(r.homography));
  hflow::io::WeightsDoc doc;
  doc.width = a.width();
  doc.height = a.height();
  doc.weights = r.weights;
  doc.residual = r.photometric_error;
  hflow::io::write_text(out / "weights.json", hflow::io::format_weights(doc));
  hflow::io::write_flo(out / "flow.flo", flow);
  hflow::io::write_pgm(out / "warped.pgm", warped);
  hflow::io::write_pgm(out / "diff.pgm", hflow::GrayImage(a.width(), a.height(), diff));

  json report{{"converged", r.converged},
              {"iterations", r.iterations},
              {"initial_error", r.initial_error},
              {"photometric_error", r.photometric_error},
              {"valid_fraction", r.valid_fraction},
              {"weights", weights_json(r.weights)}};
  try {
    const hflow::FlowField flow_ba = hflow::homography_to_flow(r.homography, a.width(), a.height());
    report["losses"] = loss_json(hflow::total_objective(
        a, b, hflow::FeatureTransform::kIdentity, flow, flow_ba));
  } catch (const hflow::Error& e) {
    report["losses"] = nullptr;
    report["losses_error"] = std::string(hflow::to_string(e.code()));
  }
  hflow::io::write_text(out / "report.json", report.dump(2) + "\n");
  if (!r.converged) {
    std::fprintf(stderr, "hflow align: Gauss-Newton did not converge (results written)\n");
    return kExitNonConvergence;
  }
  return kExitOk;
}

// ---- synth / eval ---------------------------------------------------------

struct SynthArgs {
  std::string spec;
  std::string base;
  std::string out = "synth";
};

int run_synth(const SynthArgs& a) {
  const auto specs = hflow::parse_bench_specs(hflow::io::read_text(a.spec));
  std::optional<hflow::GrayImage> base;
  if (!a.base.empty()) base = hflow::io::read_pgm(a.base);
  json manifest = json::array();
  for (const auto& spec : specs) {
    for (int i = 0; i < spec.count; ++i) {
      const auto idx = static_cast<std::uint64_t>(i);
      hflow::write_sample_dir(fs::path(a.out) / spec.id / std::to_string(i),
                              base ? hflow::gen_pair(*base, spec, idx) : hflow::gen_sample(spec, idx));
      manifest.push_back({{"spec_id", spec.id}, {"index", idx}});
    }
  }
  hflow::io::write_text(fs::path(a.out) / "manifest.json",
                        json{{"samples", manifest}}.dump(2) + "\n");
  std::printf("wrote %zu samples to %s\n", manifest.size(), a.out.c_str());
  return kExitOk;
}

// Sample keys in manifest order, or by (spec id, numeric index) when there is
// no manifest.
std::vector<std::pair<std::string, std::uint64_t>> list_samples(const fs::path& dir) {
  std::vector<std::pair<std::string, std::uint64_t>> keys;
  const fs::path manifest = dir / "manifest.json";
  if (fs::exists(manifest)) {
    try {
      const json doc = json::parse(hflow::io::read_text(manifest));
      for (const auto& s : doc.at("samples")) {
        keys.emplace_back(s.at("spec_id").get<std::string>(), s.at("index").get<std::uint64_t>());
      }
    } catch (const json::exception& e) {
      hflow::fail(hflow::ErrorCode::kBadHeader, std::string("manifest.json: ") + e.what());
    }
    return keys;
  }
  if (!fs::is_directory(dir)) hflow::fail(hflow::ErrorCode::kIoFailure, "no such directory " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  for (const auto& id : ids) {
    std::vector<std::uint64_t> idx;
    for (const auto& e : fs::directory_iterator(dir / id)) {
      const std::string name = e.path().filename().string();
      if (e.is_directory() && !name.empty() &&
          std::all_of(name.begin(), name.end(), [](char c) { return c >= '0' && c <= '9'; })) {
        idx.push_back(std::stoull(name));
      }
    }
    std::sort(idx.begin(), idx.end());
    for (auto i : idx) keys.emplace_back(id, i);
  }
  return keys;
}

struct EvalArgs {
  std::string dir;
  std::string method = "align";
  std::string out = "results.csv";
  std::string curve;
  int jobs = 1;
};

int run_eval(const EvalArgs& a) {
  const hflow::Method method = hflow::parse_method(a.method);
  if (a.jobs < 1) throw UsageError("--jobs must be >= 1");
  const auto keys = list_samples(a.dir);
  if (keys.empty()) hflow::fail(hflow::ErrorCode::kInvalidArgument, "no samples under " + a.dir);
  const hflow::SuiteReport report = hflow::evaluate_suite(
      keys,
      [&](std::size_t k) {
        return hflow::read_sample_dir(fs::path(a.dir) / keys[k].first /
                                      std::to_string(keys[k].second));
      },
      method, a.jobs);
  hflow::io::write_text(a.out, hflow::format_results_csv(report));
  if (!a.curve.empty()) hflow::io::write_text(a.curve, hflow::format_curve_csv(report.curve));
  const bool all_converged = std::all_of(report.rows.begin(), report.rows.end(),
                                         [](const auto& r) { return r.status != "nonconverged"; });
  return all_converged ? kExitOk : kExitNonConvergence;
}

// ---- project --------------------------------------------------------------

struct ProjectArgs {
  std::string features;
  std::string basis;
  std::optional<double> reg;
  std::string out = "projected.fmap";
  std::string energy = "energy.csv";
};

std::string energy_value(const std::vector<double>& p, std::size_t k) {
  if (p.empty()) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", k < p.size() ? p[k] : 1.0);
  return buf;
}

int run_project(const ProjectArgs& a) {
  const hflow::FeatureMap m = hflow::io::read_fmap(a.features);
  const hflow::FeatureMap vmap = hflow::io::read_fmap(a.basis);
  if (m.width() != vmap.width() || m.height() != vmap.height()) {
    hflow::fail(hflow::ErrorCode::kDimensionMismatch, "features and basis differ in size");
  }
  const hflow::FeatureMap projected =
      hflow::lrr_project(m, hflow::ProjectionBasis::from_feature_map(vmap), a.reg);
  hflow::io::write_fmap(a.out, projected);

  const auto pre = hflow::pca_energy(m);
  const auto post = hflow::pca_energy(projected);
  std::string csv = "k,pre,post\n";
  for (std::size_t k = 0; k < std::max(pre.size(), post.size()); ++k) {
    csv += std::to_string(k + 1) + "," + energy_value(pre, k) + "," + energy_value(post, k) + "\n";
  }
  hflow::io::write_text(a.energy, csv);
  auto show = [](const char* name, const std::vector<double>& p) {
    if (p.empty()) {
      std::printf("%s npc50=nan npc60=nan\n", name);
    } else {
      std::printf("%s npc50=%.6f npc60=%.6f\n", name, hflow::npc(p, 0.5), hflow::npc(p, 0.6));
    }
  };
  show("pre", pre);
  show("post", post);
  return kExitOk;
}

// ---- loss -----------------------------------------------------------------

struct LossArgs {
  std::string a, b;
  std::string flow_ab;
  std::string flow_ba;
  std::string transform = "identity";
  double lambda = hflow::kDefaultFilWeight;
  double mu = hflow::kDefaultInverseConsistencyWeight;
  std::string out = "-";
};

int run_loss(const LossArgs& args) {
  const hflow::FeatureTransform t = hflow::parse_feature_transform(args.transform);
  const hflow::GrayImage a = hflow::io::read_pgm(args.a);
  const hflow::GrayImage b = hflow::io::read_pgm(args.b);
  const hflow::FlowField ab = hflow::io::read_flo(args.flow_ab);
  const hflow::FlowField ba = args.flow_ba.empty() ? ab.negated() : hflow::io::read_flo(args.flow_ba);
  const hflow::LossReport r = hflow::total_objective(a, b, t, ab, ba, args.lambda, args.mu);
  json doc = loss_json(r);
  doc["transform"] = std::string(hflow::to_string(t));
  const std::string text = doc.dump(2) + "\n";
  if (args.out == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
  } else {
    hflow::io::write_text(args.out, text);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Homography-flow bases, fitting, alignment and losses"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  BasesArgs bases;
  auto* c_bases = app.add_subcommand("bases", "Write the 8 orthonormal flow bases for a grid");
  c_bases->add_option("--width", bases.width, "Grid width (>= 3)")->capture_default_str();
  c_bases->add_option("--height", bases.height, "Grid height (>= 3)")->capture_default_str();
  c_bases->add_option("--out", bases.out, "Output directory")->capture_default_str();

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit", "Fit basis weights to a dense flow (.flo)");
  c_fit->add_option("--flow", fit.flow, "Input flow")->required();
  c_fit->add_flag("--robust", fit.robust, "Use IRLS; also writes weightmap.pgm next to --out");
  c_fit->add_option("--delta", fit.delta, "Robust scale in pixels")->capture_default_str();
  c_fit->add_option("--loss", fit.loss, "Robust loss: huber or welsch")
      ->check(CLI::IsMember({"huber", "welsch"}))
      ->capture_default_str();
  c_fit->add_option("--max-iters", fit.max_iters, "IRLS iteration budget")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  c_fit->add_option("--bases-size", fit.size, "Expected WxH (default: the flow's size)");
  c_fit->add_option("--out", fit.out, "Weights JSON")->capture_default_str();

  AlignArgs align;
  auto* c_align = app.add_subcommand("align", "Estimate the homography between two images");
  c_align->add_option("--a", align.a, "Source image (PGM)")->required();
  c_align->add_option("--b", align.b, "Target image (PGM)")->required();
  c_align->add_option("--levels", align.levels, "Pyramid levels")->capture_default_str();
  c_align->add_option("--iters", align.iters, "Gauss-Newton iterations per level")
      ->capture_default_str();
  c_align->add_flag("--normalized", align.normalized,
                    "Compare zero-mean unit-variance images (default: raw intensities)");
  c_align->add_option("--out", align.out, "Output directory")->capture_default_str();

  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a synthetic benchmark from a spec");
  c_synth->add_option("--spec", synth.spec, "Spec JSON")->required();
  c_synth->add_option("--base", synth.base,
                      "Base image (PGM) shared by all samples (default: procedural texture per sample)");
  c_synth->add_option("--out", synth.out, "Output directory")->capture_default_str();

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Evaluate a method on a synthetic benchmark");
  c_eval->add_option("--dir", eval.dir, "Benchmark directory written by synth")->required();
  c_eval->add_option("--method", eval.method, "identity, fit_robust, align or align_normalized")
      ->check(CLI::IsMember({"identity", "fit_robust", "align", "align_normalized"}))
      ->capture_default_str();
  c_eval->add_option("--out", eval.out, "Per-sample results CSV")->capture_default_str();
  c_eval->add_option("--curve", eval.curve, "Robustness curve CSV (default: not written)");
  c_eval->add_option("--jobs", eval.jobs, "Worker threads")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  ProjectArgs project;
  auto* c_project = app.add_subcommand("project", "Project feature maps onto a basis span");
  c_project->add_option("--features", project.features, "Input feature map (FMAP)")->required();
  c_project->add_option("--basis", project.basis, "Basis columns as an FMAP")->required();
  c_project->add_option("--reg", project.reg,
                        "Ridge on the Gram matrix (default: 1e-8 * trace / K)");
  c_project->add_option("--out", project.out, "Projected feature map")->capture_default_str();
  c_project->add_option("--energy", project.energy, "Cumulative energy CSV")
      ->capture_default_str();

  LossArgs loss;
  auto* c_loss = app.add_subcommand("loss", "Evaluate the symmetric alignment objective");
  c_loss->add_option("--a", loss.a, "Image a (PGM)")->required();
  c_loss->add_option("--b", loss.b, "Image b (PGM)")->required();
  c_loss->add_option("--flow-ab", loss.flow_ab, "Backward flow warping a onto b")->required();
  c_loss->add_option("--flow-ba", loss.flow_ba, "Backward flow warping b onto a (default: -flow-ab)");
  c_loss->add_option("--transform", loss.transform, "identity, gradient, box3 or stack")
      ->check(CLI::IsMember({"identity", "gradient", "box3", "stack"}))
      ->capture_default_str();
  c_loss->add_option("--lambda", loss.lambda, "Feature identity weight")->capture_default_str();
  c_loss->add_option("--mu", loss.mu, "Inverse consistency weight")->capture_default_str();
  c_loss->add_option("--out", loss.out, "Report JSON ('-' for stdout)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*c_bases) return run_bases(bases);
    if (*c_fit) return run_fit(fit);
    if (*c_align) return run_align(align);
    if (*c_synth) return run_synth(synth);
    if (*c_eval) return run_eval(eval);
    if (*c_project) return run_project(project);
    if (*c_loss) return run_loss(loss);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "hflow: %s\n", e.what());
    return kExitUsage;
  } catch (const hflow::Error& e) {
    std::fprintf(stderr, "hflow: %s\n", e.what());
    return e.code() == hflow::ErrorCode::kNoTexture ? kExitNonConvergence : kExitRuntime;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hflow: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
