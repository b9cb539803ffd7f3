#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "aspan/errors.hpp"
#include "aspan/harness.hpp"
#include "aspan/viz.hpp"

namespace fs = std::filesystem;
using namespace aspan;

namespace {

constexpr int kExitOk = 0, kExitIo = 1, kExitValidation = 2, kExitNumeric = 3;

void log(const std::string& msg) { std::cerr << "[aspan] " << msg << '\n'; }

void write_json_file(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path.string());
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ParameterError("config " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

// Parallelism is capped by ASPAN_THREADS; every command currently runs on one thread.
std::size_t thread_cap() {
  const char* env = std::getenv("ASPAN_THREADS");
  if (!env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == env || *end != '\0' || v < 1) throw ParameterError("ASPAN_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

std::string extent_str(Extent e) { return std::to_string(e.h) + "x" + std::to_string(e.w); }

struct Common {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  bool viz = false;
};

void add_common(CLI::App* cmd, Common& c, bool out_required = true) {
  cmd->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Random seed");
  auto* o = cmd->add_option("--out", c.out, "Output path");
  if (out_required) o->required();
}

int cmd_gen(const Common& c, std::optional<std::size_t> count) {
  const RunConfig rc = load_config(c.config);
  DatasetManifest m;
  m.seed = c.seed;
  m.count = count.value_or(rc.count);
  m.extent = rc.extent;
  m.warp = rc.warp;
  if (m.count == 0) throw ParameterError("gen: count must be positive");
  for (std::size_t k = 0; k < m.count; ++k) m.pairs.push_back("pair_" + std::to_string(k));
  write_dataset(c.out, m, generate_dataset(m));
  std::cout << "wrote " << m.count << " pairs " << extent_str(m.extent) << " tier " << to_string(m.warp.tier)
            << " seed " << m.seed << " to " << c.out << '\n';
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& data_dir, const std::string& holdout_dir) {
  RunConfig rc = load_config(c.config);
  const auto [manifest, data] = read_dataset(data_dir);
  std::vector<SynthPair> holdout;
  if (!holdout_dir.empty()) holdout = read_dataset(holdout_dir).second;
  if (rc.model.train_extent.h != manifest.extent.h || rc.model.train_extent.w != manifest.extent.w) {
    log("training extent set from dataset: " + extent_str(manifest.extent));
    rc.model.train_extent = manifest.extent;
  }
  rc.train.seed = c.seed;
  ModelWeights w = init_model(rc.model, c.seed);
  log("parameters: " + std::to_string(w.parameter_count()) + ", pairs: " + std::to_string(data.size()));
  nlohmann::json epochs = nlohmann::json::array();
  nlohmann::json evals = nlohmann::json::array();
  const fs::path out(c.out);
  try {
    train_model(w, rc.model, rc.train, data, [&](const EpochStats& s) {
      epochs.push_back(to_json(s));
      std::string line = "epoch " + std::to_string(s.epoch) + " lr " + std::to_string(s.lr) + " total " +
                         std::to_string(s.total) + " coarse " + std::to_string(s.coarse) + " fine " +
                         std::to_string(s.fine) + " flow " + std::to_string(s.flow);
      if (!holdout.empty()) {
        const EvalReport r = evaluate(w, rc.model, holdout);
        evals.push_back(to_json(r));
        line += " | P@5px " + std::to_string(r.precision_5px);
      }
      log(line);
    });
  } catch (const TrainingDiverged& e) {
    fs::create_directories(out);
    write_json_file(out / "diverged_batch.json", {{"error", e.what()},
                                                  {"epoch", e.epoch},
                                                  {"step", e.step},
                                                  {"pair_seeds", e.batch_seeds},
                                                  {"config", to_json(rc)}});
    log(std::string(e.what()) + "; batch written to " + (out / "diverged_batch.json").string());
    return kExitNumeric;
  }
  save_weights(out, w, rc.model);
  nlohmann::json metrics{{"seed", c.seed}, {"config", to_json(rc)}, {"epochs", epochs}};
  if (!holdout.empty()) metrics["holdout"] = evals;
  write_json_file(out / "metrics.json", metrics);
  std::cout << "weights and metrics written to " << c.out << '\n';
  return kExitOk;
}

int cmd_match(const Common& c, const std::string& weights, const std::string& pair_dir, const std::string& image_a,
              const std::string& image_b) {
  auto [cfg, w] = load_weights(weights);
  Tensor a, b;
  if (!pair_dir.empty()) {
    const SynthPair p = read_pair(pair_dir);
    a = p.image_a;
    b = p.image_b;
  } else {
    if (image_a.empty() || image_b.empty()) throw ParameterError("match: give --pair or both --image-a and --image-b");
    a = read_image(image_a);
    b = read_image(image_b);
  }
  const ForwardOutput out = [&] {
    NoGradGuard guard;
    return forward(w, cfg, a, b);
  }();
  const Extent e{a.dim(0), a.dim(1)};
  if (e.h != cfg.train_extent.h || e.w != cfg.train_extent.w) {
    log("resolution " + extent_str(e) + " differs from training " + extent_str(cfg.train_extent) +
        (cfg.normalized_pe ? "; normalized encoding" : "; raw encoding") + " alpha " + std::to_string(out.pe.alpha) +
        " beta " + std::to_string(out.pe.beta));
  }
  const MatchSet m = extract_matches(out, cfg);
  const fs::path dir(c.out);
  fs::create_directories(dir);
  std::ofstream os(dir / "matches.jsonl", std::ios::binary);
  if (!os) throw IoError("cannot write " + (dir / "matches.jsonl").string());
  write_matches_jsonl(os, m);
  os.close();
  write_json_file(dir / "match_summary.json", {{"matches", m.fine.size()},
                                               {"image_extent", {e.h, e.w}},
                                               {"train_extent", {cfg.train_extent.h, cfg.train_extent.w}},
                                               {"normalized_pe", cfg.normalized_pe},
                                               {"alpha", out.pe.alpha},
                                               {"beta", out.pe.beta}});
  if (c.viz) {
    write_ppm(dir / "matches.ppm", match_overlay(a, b, m));
    const FlowMap flow = out.stack.flows.back().a.values();
    write_ppm(dir / "uncertainty_a.ppm", uncertainty_heatmap(flow));
    const SpanGrid& span = out.stack.spans.back().first;
    if (!span.cells.empty()) write_ppm(dir / "spans_b.ppm", span_overlay(b, span, out.stack.b.stride));
  }
  std::cout << m.fine.size() << " matches written to " << (dir / "matches.jsonl").string() << '\n';
  return kExitOk;
}

int cmd_eval(const Common& c, const std::string& weights, const std::string& data_dir) {
  auto [cfg, w] = load_weights(weights);
  const auto data = read_dataset(data_dir).second;
  const EvalReport r = evaluate(w, cfg, data);
  write_json_file(c.out, to_json(r));
  std::cout << "pairs " << r.pairs << " P@2px " << r.precision_2px << " P@5px " << r.precision_5px << " R@5px "
            << r.recall_5px << " EPE";
  for (double v : r.epe_per_block) std::cout << ' ' << v;
  std::cout << '\n';
  return kExitOk;
}

int cmd_bench(const Common& c, const std::vector<std::size_t>& sizes, const std::string& mode, bool timing) {
  RunConfig rc = load_config(c.config);
  rc.model.gla.mode = parse_attention_mode(mode);
  const BenchReport r = run_bench(sizes, rc.model.gla, c.seed, timing);
  std::printf("%8s %8s %14s %14s %8s\n", "px", "tokens", "local_ops", "full_ops", "g^2");
  for (const BenchRow& row : r.rows) {
    std::printf("%8zu %8zu %14llu %14llu %8zu", row.image_px, row.tokens,
                static_cast<unsigned long long>(row.local_ops), static_cast<unsigned long long>(row.full_ops),
                row.sampled_per_query);
    if (timing) std::printf("  %.3f ms / %.3f ms", row.local_ms, row.full_ms);
    std::printf("\n");
  }
  std::printf("log-log slope: local %.4f, full %.4f\n", r.local_slope, r.full_slope);
  if (!c.out.empty()) write_json_file(c.out, to_json(r));
  return kExitOk;
}

int cmd_ablate(const Common& c, const std::string& data_dir, const std::string& holdout_dir) {
  RunConfig rc = load_config(c.config);
  const auto [manifest, data] = read_dataset(data_dir);
  const auto holdout = read_dataset(holdout_dir).second;
  rc.model.train_extent = manifest.extent;
  const AblationReport r = run_ablation(rc, c.seed, data, holdout, [](AttentionMode m, const EpochStats& s) {
    log(to_string(m) + " epoch " + std::to_string(s.epoch) + " total " + std::to_string(s.total));
  });
  write_json_file(c.out, to_json(r));
  std::printf("%-14s %8s %8s %8s %10s\n", "mode", "P@2px", "P@5px", "R@5px", "EPE(last)");
  for (const AblationRow& row : r.rows) {
    std::printf("%-14s %8.4f %8.4f %8.4f %10.4f\n", to_string(row.mode).c_str(), row.eval.precision_2px,
                row.eval.precision_5px, row.eval.recall_5px,
                row.eval.epe_per_block.empty() ? 0.0 : row.eval.epe_per_block.back());
  }
  std::printf("%s\n", r.note.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Span-attention feature matcher trained on synthetic homography pairs"};
  app.require_subcommand(1);

  Common gen_c, train_c, match_c, eval_c, bench_c, ablate_c;
  std::optional<std::size_t> gen_count;
  std::string data_dir, holdout_dir, weights, pair_dir, image_a, image_b, mode = "adaptive_span";
  std::vector<std::size_t> sizes{64, 96, 128, 192};
  bool timing = false;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic pair dataset");
  add_common(gen, gen_c);
  gen->add_option("--count", gen_count, "Number of pairs (overrides config)");

  auto* train = app.add_subcommand("train", "Train a model and write weights plus metrics.json");
  add_common(train, train_c);
  train->add_option("--data", data_dir, "Training dataset directory")->required();
  train->add_option("--holdout", holdout_dir, "Held-out dataset evaluated after every epoch");

  auto* match = app.add_subcommand("match", "Match one image pair");
  add_common(match, match_c);
  match->add_flag("--viz", match_c.viz, "Write PPM visualizations");
  match->add_option("--weights", weights, "Weights directory")->required();
  match->add_option("--pair", pair_dir, "Pair directory from a generated dataset");
  match->add_option("--image-a", image_a, "Image A (.aspt, .pgm or .ppm)");
  match->add_option("--image-b", image_b, "Image B (.aspt, .pgm or .ppm)");

  auto* eval = app.add_subcommand("eval", "Evaluate weights on a dataset");
  add_common(eval, eval_c);
  eval->add_option("--weights", weights, "Weights directory")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();

  auto* bench = app.add_subcommand("bench", "Attention cost scaling against image size");
  add_common(bench, bench_c, false);
  bench->add_option("--sizes", sizes, "Square image sizes in pixels")->delimiter(',');
  bench->add_option("--mode", mode, "adaptive_span or fixed_span");
  bench->add_flag("--timing", timing, "Also measure wall time (not reproducible)");

  auto* ablate = app.add_subcommand("ablate", "Train all attention modes and compare");
  add_common(ablate, ablate_c);
  ablate->add_option("--data", data_dir, "Training dataset directory")->required();
  ablate->add_option("--holdout", holdout_dir, "Held-out dataset directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    const std::size_t threads = thread_cap();
    if (std::getenv("ASPAN_THREADS")) log("thread cap " + std::to_string(threads) + "; running on 1 thread");
    if (*gen) return cmd_gen(gen_c, gen_count);
    if (*train) return cmd_train(train_c, data_dir, holdout_dir);
    if (*match) return cmd_match(match_c, weights, pair_dir, image_a, image_b);
    if (*eval) return cmd_eval(eval_c, weights, data_dir);
    if (*bench) return cmd_bench(bench_c, sizes, mode, timing);
    if (*ablate) return cmd_ablate(ablate_c, data_dir, holdout_dir);
  } catch (const NumericError& e) {
    log(std::string("numeric failure: ") + e.what());
    return kExitNumeric;
  } catch (const IoError& e) {
    log(std::string("io error: ") + e.what());
    return kExitIo;
  } catch (const Error& e) {
    log(std::string("invalid input: ") + e.what());
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    log(std::string("io error: ") + e.what());
    return kExitIo;
  }
  return kExitValidation;
}
