// fvit: batch front-end for data generation, model setup, certification,
// attack verification and saliency metrics.
//
// Exit codes: 0 ok, 1 usage, 2 data, 3 internal invariant.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "fvit/attack_eval.hpp"
#include "fvit/certify.hpp"
#include "fvit/vit_toy.hpp"

namespace fs = std::filesystem;
using namespace fvit;

namespace {

// ---------------------------------------------------------------------------
// dataset directory: manifest.csv (id,image,mask,label) + images/ + masks/

struct Sample {
  std::string id;
  std::vector<double> image;
  std::vector<double> mask;
  std::size_t label = 0;
};

std::vector<Sample> load_dataset(const fs::path& dir, std::size_t limit) {
  const auto table = read_csv(dir / "manifest.csv");
  const auto c_id = table.column("id"), c_img = table.column("image"), c_mask = table.column("mask"),
             c_label = table.column("label");
  std::vector<Sample> out;
  for (const auto& row : table.rows) {
    if (limit && out.size() == limit) break;
    Sample s;
    s.id = row[c_id];
    s.image = read_tensor(dir / row[c_img]).to_doubles();
    s.mask = read_tensor(dir / row[c_mask]).to_doubles();
    const double label = parse_number(row[c_label]);
    if (label < 0 || label != std::floor(label)) fail_data("bad label for " + s.id);
    s.label = static_cast<std::size_t>(label);
    if (s.mask.size() != s.image.size()) fail_data("mask and image differ in size for " + s.id);
    out.push_back(std::move(s));
  }
  if (out.empty()) fail_data(dir.string() + ": dataset is empty");
  return out;
}

// FNV-1a over file bytes; detects reports made from other inputs.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string digest_of(const std::vector<fs::path>& files) {
  std::uint64_t h = 1469598103934665603ull;
  for (const auto& f : files) h = fnv1a(read_file(f), h);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string model_digest(const fs::path& dir) {
  std::vector<fs::path> files{dir / "model.txt"};
  for (const char* name : kModelTensorNames) files.push_back(dir / (std::string(name) + ".fvtn"));
  return digest_of(files);
}

std::string data_digest(const fs::path& dir, std::size_t limit) {
  const auto table = read_csv(dir / "manifest.csv");
  std::vector<fs::path> files{dir / "manifest.csv"};
  const auto c_img = table.column("image");
  for (std::size_t i = 0; i < table.rows.size() && (limit == 0 || i < limit); ++i)
    files.push_back(dir / table.rows[i][c_img]);
  return digest_of(files);
}

void require_dir(const fs::path& p, const char* what) {
  if (p.empty()) fail_usage(std::string("missing ") + what + " path");
  if (!fs::is_directory(p)) fail_usage(std::string(what) + " directory not found: " + p.string());
}

void require_out(const fs::path& p) {
  if (p.empty()) fail_usage("missing --out path");
  const auto parent = p.parent_path();
  if (!parent.empty() && !fs::is_directory(parent))
    fail_usage("output directory does not exist: " + parent.string());
}

// ---------------------------------------------------------------------------
// smoothing setup shared by certify, verify and eval

struct SmoothingOptions {
  std::string model;
  std::string data;
  std::string denoiser = "shrinkage";
  double sigma = 0.25;
  double range_scale = 2.0;
  std::size_t limit = 0;  // 0: every input
};

struct Pipeline {
  std::unique_ptr<ToyViT> model;
  std::shared_ptr<const Denoiser> denoiser;
  SmoothingPipeline pipe;
};

// The shrinkage prior is the per-pixel mean and the pooled variance of the
// dataset the pipeline runs on.
Pipeline make_pipeline(const SmoothingOptions& o, const std::vector<Sample>& data, std::size_t threads,
                       AttentionMode mode = AttentionMode::CLS_LAST) {
  Pipeline p;
  p.model = std::make_unique<ToyViT>(load_model(o.model), mode);
  if (o.denoiser == "identity") {
    p.denoiser = identity_denoiser();
  } else if (o.denoiser == "shrinkage") {
    const std::size_t d = data.front().image.size();
    std::vector<double> mean(d, 0.0);
    for (const auto& s : data)
      for (std::size_t i = 0; i < d; ++i) mean[i] += s.image[i];
    for (auto& v : mean) v /= static_cast<double>(data.size());
    double var = 0.0;
    for (const auto& s : data)
      for (std::size_t i = 0; i < d; ++i) var += (s.image[i] - mean[i]) * (s.image[i] - mean[i]);
    var = std::max(var / static_cast<double>(data.size() * d), 1e-6);
    p.denoiser = shrinkage_denoiser_for_pixels(mean, var, o.range_scale);
  } else {
    fail_usage("unknown denoiser: " + o.denoiser);
  }
  for (const auto& s : data)
    if (s.image.size() != p.model->input_size()) fail_data("input " + s.id + " does not match the model size");
  p.pipe.model = p.model.get();
  p.pipe.denoiser = p.denoiser.get();
  p.pipe.dds.sigma = o.sigma;
  p.pipe.dds.range_scale = o.range_scale;
  p.pipe.threads = threads;
  p.pipe.timestep();  // fails early when sigma is off the schedule
  return p;
}

void add_smoothing_options(CLI::App* cmd, SmoothingOptions& o) {
  cmd->add_option("--model", o.model, "model directory");
  cmd->add_option("--input", o.data, "dataset directory");
  cmd->add_option("--denoiser", o.denoiser)->check(CLI::IsMember({"identity", "shrinkage"}));
  cmd->add_option("--sigma", o.sigma);
  cmd->add_option("--range-scale", o.range_scale);
  cmd->add_option("--limit", o.limit, "use only the first N inputs");
}

Norm parse_norm(const std::string& s) {
  if (s == "l2") return Norm::L2;
  if (s == "linf") return Norm::LINF;
  fail_usage("unknown norm: " + s);
}

// --ci plugin | binomial:LEVEL
void parse_ci(const std::string& s, CertParams& cp) {
  if (s == "plugin") {
    cp.confidence_mode = ConfidenceMode::PLUGIN;
    return;
  }
  if (s.rfind("binomial:", 0) == 0) {
    cp.confidence_mode = ConfidenceMode::BINOMIAL_CI;
    cp.ci_level = parse_number(s.substr(9));
    return;
  }
  fail_usage("--ci must be plugin or binomial:LEVEL");
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  for (const auto& cell : split_csv_line(s))
    if (!cell.empty()) out.push_back(parse_number(cell));
  return out;
}

// Report sidecar: "<report>.meta", key = value lines.
void write_meta(const fs::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail_data("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << " = " << v << '\n';
}

// ---------------------------------------------------------------------------
// --config: key = value lines, keys are long flag names of the subcommand.
// Anything given on the command line wins.

void apply_config(CLI::App* cmd, const std::string& path) {
  std::ifstream in(path);
  if (!in) fail_usage("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail_usage(path + ":" + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    CLI::Option* opt = key == "config" ? nullptr : cmd->get_option_no_throw("--" + key);
    if (opt == nullptr) fail_usage(path + ": unknown key '" + key + "' for " + cmd->get_name());
    if (opt->count() > 0) continue;
    try {
      opt->add_result(value);
      opt->run_callback();
    } catch (const CLI::Error& e) {
      fail_usage(path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

// ---------------------------------------------------------------------------
// commands

struct GenDataArgs {
  std::size_t count = 0;
  std::size_t size = 16;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_gen_data(const GenDataArgs& a) {
  if (a.count == 0) fail_usage("count must be positive");
  if (a.out.empty()) fail_usage("missing --out path");
  const auto ds = gen_synthetic_dataset(a.count, a.size, a.seed);
  const fs::path dir = a.out;
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "masks");
  CsvTable manifest{{"id", "image", "mask", "label"}, {}};
  const Shape shape{a.size, a.size};
  for (std::size_t i = 0; i < a.count; ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%05zu", i);
    const std::string img = std::string("images/") + id + ".fvtn";
    const std::string mask = std::string("masks/") + id + ".fvtn";
    write_tensor(Tensor::from_doubles(shape, ds.images[i]), dir / img);
    write_tensor(Tensor::from_doubles(shape, ds.masks[i]), dir / mask);
    manifest.rows.push_back({id, img, mask, std::to_string(ds.labels[i])});
  }
  write_csv(dir / "manifest.csv", manifest);
}

struct InitArgs {
  ToyViTDims dims;
  std::uint64_t seed = 0;
  std::string out;
};

void cmd_init_model(const InitArgs& a) {
  if (a.out.empty()) fail_usage("missing --out path");
  save_model(init_params(a.seed, a.dims), a.out);
}

struct FitArgs {
  std::string model;
  std::string data;
  double ridge = 1e-3;
  std::string out;
};

void cmd_fit_head(const FitArgs& a) {
  require_dir(a.model, "model");
  require_dir(a.data, "dataset");
  if (a.out.empty()) fail_usage("missing --out path");
  const auto data = load_dataset(a.data, 0);
  std::vector<std::vector<double>> images;
  std::vector<std::size_t> labels;
  for (const auto& s : data) {
    images.push_back(s.image);
    labels.push_back(s.label);
  }
  auto p = fit_head(load_model(a.model), images, labels, a.ridge);
  save_model(p, a.out);
  const ToyViT model(p);
  std::size_t correct = 0;
  for (const auto& s : data) correct += model.forward(s.image).prediction.argmax() == s.label ? 1 : 0;
  std::cerr << "train accuracy " << correct << "/" << data.size() << '\n';
}

struct CertifyArgs {
  SmoothingOptions smooth;
  std::size_t m = 4096;
  std::size_t k = 4;
  double beta = 0.75;
  std::string norm = "l2";
  std::string linf_div = "sqrt_d";
  std::string ci = "plugin";
  std::uint64_t seed = 0;
  std::string out;
};

const std::vector<std::string> kCertifyColumns = {
    "input_id", "sigma", "m",       "k",       "beta",       "norm",         "p1",
    "p2",       "P_bound", "Q_bound", "R_faithful", "best_alpha_P", "best_alpha_Q", "argmax_certified"};

void cmd_certify(const CertifyArgs& a, std::size_t threads) {
  require_dir(a.smooth.model, "model");
  require_dir(a.smooth.data, "dataset");
  require_out(a.out);
  CertParams cp;
  cp.sigma = a.smooth.sigma;
  cp.m = a.m;
  cp.k = a.k;
  cp.beta = a.beta;
  cp.norm = parse_norm(a.norm);
  cp.linf_divisor = a.linf_div == "d" ? LinfDivisor::D : LinfDivisor::SQRT_D;
  cp.seed = a.seed;
  parse_ci(a.ci, cp);
  cp.validate();

  const auto data = load_dataset(a.smooth.data, a.smooth.limit);
  auto pl = make_pipeline(a.smooth, data, threads);
  CsvTable report{kCertifyColumns, {}};
  for (const auto& s : data) {
    try {
      const auto r = certify_input(pl.pipe, s.image, cp);
      report.rows.push_back({s.id, format_number(cp.sigma), std::to_string(cp.m), std::to_string(cp.k),
                             format_number(cp.beta), std::string(to_string(cp.norm)), format_number(r.p1),
                             format_number(r.p2), format_number(r.P_bound), format_number(r.Q_bound),
                             format_number(r.R_faithful), format_number(r.best_alpha_P),
                             format_number(r.best_alpha_Q), r.argmax_certified ? "1" : "0"});
    } catch (const Error& e) {
      throw Error(e.kind(), "input " + s.id + ": " + e.what());
    }
  }
  write_csv(a.out, report);
  write_meta(a.out + ".meta", {{"model", a.smooth.model},
                               {"input", a.smooth.data},
                               {"denoiser", a.smooth.denoiser},
                               {"sigma", format_number(a.smooth.sigma)},
                               {"range_scale", format_number(a.smooth.range_scale)},
                               {"limit", std::to_string(a.smooth.limit)},
                               {"m", std::to_string(a.m)},
                               {"k", std::to_string(a.k)},
                               {"beta", format_number(a.beta)},
                               {"norm", a.norm},
                               {"seed", std::to_string(a.seed)},
                               {"model_digest", model_digest(a.smooth.model)},
                               {"data_digest", data_digest(a.smooth.data, a.smooth.limit)}});
}

struct VerifyArgs {
  std::string report;
  std::string factors = "1.0,1.5,2.0";
  std::size_t attempts = 10;
  std::size_t steps = 10;
  std::size_t grad_draws = 4;
  std::uint64_t attack_seed = 0;
  std::string out;
};

void cmd_verify(const VerifyArgs& a, std::size_t threads) {
  if (a.report.empty()) fail_usage("missing --cert-report path");
  require_out(a.out);
  const auto factors = parse_list(a.factors);
  if (factors.empty()) fail_usage("empty factor list");
  if (!fs::exists(a.report)) fail_data("certification report not found: " + a.report);
  const fs::path meta_path = a.report + ".meta";
  if (!fs::exists(meta_path)) fail_data("certification report has no .meta sidecar: " + meta_path.string());
  const auto meta = detail::read_key_values(meta_path);
  auto get = [&](const std::string& key) {
    const auto it = meta.find(key);
    if (it == meta.end()) fail_data(meta_path.string() + ": missing key " + key);
    return it->second;
  };

  SmoothingOptions so;
  so.model = get("model");
  so.data = get("input");
  so.denoiser = get("denoiser");
  so.sigma = parse_number(get("sigma"));
  so.range_scale = parse_number(get("range_scale"));
  so.limit = static_cast<std::size_t>(parse_number(get("limit")));
  require_dir(so.model, "model");
  require_dir(so.data, "dataset");
  if (model_digest(so.model) != get("model_digest") || data_digest(so.data, so.limit) != get("data_digest"))
    fail_data("stale certification report: model or dataset changed since " + a.report + " was written");

  const auto report = read_csv(a.report);
  const auto c_id = report.column("input_id"), c_r = report.column("R_faithful");
  const auto data = load_dataset(so.data, so.limit);
  if (report.rows.size() != data.size()) fail_data("stale certification report: input count differs");
  auto pl = make_pipeline(so, data, threads);

  VerifyParams vp;
  vp.factors = factors;
  vp.attempts = a.attempts;
  vp.steps = a.steps;
  vp.m = static_cast<std::size_t>(parse_number(get("m")));
  vp.k = static_cast<std::size_t>(parse_number(get("k")));
  vp.beta = parse_number(get("beta"));
  vp.norm = parse_norm(get("norm"));
  vp.seed = static_cast<std::uint64_t>(std::stoull(get("seed")));
  vp.surrogate = {a.grad_draws, derive_seed(a.attack_seed, 0x5eed)};
  vp.attack_seed = a.attack_seed;

  CsvTable out{{"input_id", "factor", "objective", "attempts", "successes"}, {}};
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (report.rows[i][c_id] != data[i].id) fail_data("stale certification report: input ids differ");
    const double radius = parse_number(report.rows[i][c_r]);
    const auto rep = verify_region(pl.pipe, data[i].image, radius, vp);
    for (const auto& row : rep.rows)
      out.rows.push_back({data[i].id, format_number(row.factor), std::string(to_string(row.objective)),
                          std::to_string(row.attempts), std::to_string(row.successes)});
  }
  write_csv(a.out, out);
}

struct EvalArgs {
  SmoothingOptions smooth;
  std::string mode = "smoothed";
  std::string metrics = "all";
  std::size_t m = 256;
  std::uint64_t seed = 0;
  double perturb = 8.0 / 255.0;  // l-inf size of the s_faith perturbation
  std::string dump;
  std::string out;
};

const std::vector<std::string> kMetricNames = {"pixel_accuracy", "miou",      "average_precision",
                                               "p_auc_pos",      "p_auc_neg", "s_faith"};

void cmd_eval(const EvalArgs& a, std::size_t threads) {
  require_dir(a.smooth.model, "model");
  require_dir(a.smooth.data, "dataset");
  require_out(a.out);
  std::vector<std::string> wanted;
  if (a.metrics == "all") {
    wanted = kMetricNames;
  } else {
    for (const auto& m : split_csv_line(a.metrics)) {
      if (std::find(kMetricNames.begin(), kMetricNames.end(), m) == kMetricNames.end())
        fail_usage("unknown metric: " + m);
      wanted.push_back(m);
    }
  }
  if (!a.dump.empty()) fs::create_directories(a.dump);

  const auto data = load_dataset(a.smooth.data, a.smooth.limit);
  auto pl = make_pipeline(a.smooth, data, threads,
                          a.mode == "rollout" ? AttentionMode::CLS_ROLLOUT : AttentionMode::CLS_LAST);
  const auto& mp = pl.model->params();
  const std::size_t side = mp.image_size();

  auto saliency = [&](std::span<const double> x, const Sample& s, std::size_t index) -> std::vector<double> {
    if (a.mode == "raw" || a.mode == "rollout") {
      const auto w = pl.model->forward(x).attention;
      return upsample_attention(w.weights(), mp.patches_per_side(), mp.patch_size);
    }
    if (a.mode == "smoothed") {
      const auto est = estimate_smoothed(pl.pipe, x, a.m, a.seed);
      return upsample_attention(est.w_tilde.weights(), mp.patches_per_side(), mp.patch_size);
    }
    if (a.mode == "oracle") return s.mask;
    if (a.mode == "random") {
      Rng rng(derive_seed(a.seed, index));
      std::vector<double> r(x.size());
      for (auto& v : r) v = rng.uniform();
      return r;
    }
    fail_usage("unknown saliency mode: " + a.mode);
  };

  CsvTable out{{"input_id", "metric", "value"}, {}};
  const auto fractions = default_erase_fractions();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const auto map = saliency(s.image, s, i);
    if (!a.dump.empty())
      write_tensor(Tensor::from_doubles({side, side}, map), fs::path(a.dump) / (s.id + ".fvtn"));
    for (const auto& name : wanted) {
      double value = 0.0;
      if (name == "pixel_accuracy") {
        value = pixel_accuracy(map, s.mask);
      } else if (name == "miou") {
        value = miou(map, s.mask);
      } else if (name == "average_precision") {
        const auto ap = average_precision(map, s.mask);
        if (ap.empty_mask) out.rows.push_back({s.id, "ap_empty_mask", "1"});
        value = ap.value;
      } else if (name == "p_auc_pos" || name == "p_auc_neg") {
        const auto mode = name == "p_auc_pos" ? PerturbationMode::POSITIVE : PerturbationMode::NEGATIVE;
        value = p_auc(perturbation_test(pl.pipe, map, s.image, mode, fractions, a.m, a.seed));
      } else {
        // Saliency of a seeded uniform l-inf perturbation of the input.
        Rng rng(derive_seed(derive_seed(a.seed, 0xfa17), i));
        std::vector<double> x2(s.image);
        for (auto& v : x2) v = std::clamp(v + a.perturb * (2.0 * rng.uniform() - 1.0), 0.0, 1.0);
        value = s_faith(map, saliency(x2, s, i));
      }
      out.rows.push_back({s.id, name, format_number(value)});
    }
  }
  write_csv(a.out, out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Certified faithful-attention toolkit for a toy vision transformer"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "worker threads")->check(CLI::Range(std::size_t{1}, std::size_t{256}));
  std::string config;

  GenDataArgs gen;
  auto* c_gen = app.add_subcommand("gen-data", "write a synthetic blob dataset");
  c_gen->add_option("--count", gen.count);
  c_gen->add_option("--size", gen.size);
  c_gen->add_option("--seed", gen.seed);
  c_gen->add_option("--out", gen.out);

  InitArgs init;
  auto* c_init = app.add_subcommand("init-model", "write randomly initialised toy ViT weights");
  c_init->add_option("--seed", init.seed);
  c_init->add_option("--image-size", init.dims.image_size);
  c_init->add_option("--patch", init.dims.patch_size);
  c_init->add_option("--q", init.dims.q);
  c_init->add_option("--layers", init.dims.layers);
  c_init->add_option("--classes", init.dims.classes);
  c_init->add_option("--out", init.out);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-head", "fit the classification head by ridge regression");
  c_fit->add_option("--model", fit.model);
  c_fit->add_option("--input", fit.data);
  c_fit->add_option("--ridge", fit.ridge);
  c_fit->add_option("--out", fit.out);

  CertifyArgs cert;
  auto* c_cert = app.add_subcommand("certify", "certify the faithful region of every input");
  add_smoothing_options(c_cert, cert.smooth);
  c_cert->add_option("--m", cert.m);
  c_cert->add_option("--k", cert.k);
  c_cert->add_option("--beta", cert.beta);
  c_cert->add_option("--norm", cert.norm)->check(CLI::IsMember({"l2", "linf"}));
  c_cert->add_option("--linf-div", cert.linf_div)->check(CLI::IsMember({"sqrt_d", "d"}));
  c_cert->add_option("--ci", cert.ci);
  c_cert->add_option("--seed", cert.seed);
  c_cert->add_option("--out", cert.out);

  VerifyArgs ver;
  auto* c_ver = app.add_subcommand("verify", "attack certified inputs at multiples of their radius");
  c_ver->add_option("--cert-report", ver.report);
  c_ver->add_option("--factors", ver.factors);
  c_ver->add_option("--attempts", ver.attempts);
  c_ver->add_option("--steps", ver.steps);
  c_ver->add_option("--grad-draws", ver.grad_draws);
  c_ver->add_option("--attack-seed", ver.attack_seed);
  c_ver->add_option("--out", ver.out);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "saliency metrics against the ground-truth masks");
  add_smoothing_options(c_eval, ev.smooth);
  c_eval->add_option("--saliency-mode", ev.mode)
      ->check(CLI::IsMember({"raw", "rollout", "smoothed", "oracle", "random"}));
  c_eval->add_option("--metrics", ev.metrics);
  c_eval->add_option("--m", ev.m);
  c_eval->add_option("--seed", ev.seed);
  c_eval->add_option("--perturb", ev.perturb);
  c_eval->add_option("--dump", ev.dump, "directory for saliency maps");
  c_eval->add_option("--out", ev.out);

  for (auto* sub : app.get_subcommands({})) sub->add_option("--config", config, "key = value defaults");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    auto* sub = app.get_subcommands().front();
    if (!config.empty()) apply_config(sub, config);
    if (sub == c_gen) cmd_gen_data(gen);
    else if (sub == c_init) cmd_init_model(init);
    else if (sub == c_fit) cmd_fit_head(fit);
    else if (sub == c_cert) cmd_certify(cert, threads);
    else if (sub == c_ver) cmd_verify(ver, threads);
    else if (sub == c_eval) cmd_eval(ev, threads);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
