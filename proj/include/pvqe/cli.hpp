#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pvqe/bench.hpp"
#include "pvqe/enrollment.hpp"
#include "pvqe/gradcheck.hpp"
#include "pvqe/metrics.hpp"
#include "pvqe/trainer.hpp"
#include "pvqe/wav.hpp"
#include "pvqe/weights_io.hpp"

namespace pvqe {

// Command-line entry points. Exit codes: 0 success, 1 usage error,
// 2 runtime error. Diagnostics go to stderr, machine output to stdout or
// --out paths. PVQE_SEED overrides config seeds for reproducibility sweeps.

namespace cli_detail {

inline std::optional<uint64_t> seed_override() {
  const char* env = std::getenv("PVQE_SEED");
  if (!env || !*env) return std::nullopt;
  return std::strtoull(env, nullptr, 10);
}

inline nlohmann::json load_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw InvalidConfig("bad JSON in " + path + ": " + e.what());
  }
}

inline int cmd_enroll(const std::string& model_path, const std::string& audio_path,
                      const std::string& mode, const std::string& out_path) {
  Model<float> model = load_weights<float>(model_path);
  const auto audio = read_wav<float>(audio_path);
  SpeakerEmbedding<float> emb;
  const Provenance p = provenance_from_name(mode);
  if (p == Provenance::internal) {
    StreamEngine<float> engine(model);
    emb = extract_internal_embedding(engine, std::span<const float>(audio));
  } else if (p == Provenance::fbank) {
    emb = fbank_embedding(std::span<const float>(audio), model.config.features());
  } else if (p == Provenance::zero) {
    emb = zero_embedding<float>(model.config.embedding_dim);
  } else {
    throw InvalidInput("enroll: mode must be internal, fbank or zero");
  }
  save_embedding(emb, out_path);
  std::cout << "wrote " << out_path << " (" << provenance_name(emb.provenance) << ", dim "
            << emb.dim() << ")\n";
  return 0;
}

inline int cmd_enhance(const std::string& model_path, const std::string& mic_path,
                       const std::string& far_path, const std::string& emb_path,
                       const std::string& out_path) {
  Model<float> model = load_weights<float>(model_path);
  StreamEngine<float> engine(model);
  const auto mic = read_wav<float>(mic_path);
  std::vector<float> far;
  if (!far_path.empty()) far = read_wav<float>(far_path);
  StreamState<float> st = engine.make_state();
  if (!emb_path.empty()) {
    const auto emb = load_embedding<float>(emb_path);
    engine.pin_embedding(st, std::span<const float>(emb.v));
  }
  const auto out = enhance_streaming(engine, st, std::span<const float>(mic),
                                     std::span<const float>(far));
  write_wav(out_path, out);
  std::cout << "wrote " << out_path << " (" << out.size() << " samples)\n";
  return 0;
}

inline int cmd_train_toy(const std::string& config_path, const std::string& out_dir) {
  const auto j = load_json(config_path);
  ModelConfig mc = j.contains("model") ? ModelConfig::from_json(j.at("model")) : ModelConfig::desk();
  TrainerConfig tc = j.contains("trainer") ? TrainerConfig::from_json(j.at("trainer")) : TrainerConfig{};
  DataConfig dc = j.contains("data") ? DataConfig::from_json(j.at("data")) : DataConfig{};
  if (auto s = seed_override()) tc.seed = *s;
  std::cerr << "training " << tc.embedding_mode << " model: " << tc.iterations
            << " iterations, batch " << tc.batch << ", seed " << tc.seed << "\n";
  auto result = train<float>(mc, tc, dc, out_dir);
  std::cout << "final loss " << result.losses.back() << "\n";
  std::cout << "checkpoints in " << out_dir << "\n";
  return 0;
}

inline int cmd_eval(const std::string& metric, const std::string& ref_path,
                    const std::string& deg_path, const std::string& report_path) {
  const auto ref = read_wav<float>(ref_path);
  const auto deg = read_wav<float>(deg_path);
  double value = 0.0;
  if (metric == "erle")
    value = erle(std::span<const float>(ref), std::span<const float>(deg));
  else if (metric == "tsos")
    value = tsos(std::span<const float>(ref), std::span<const float>(deg));
  else if (metric == "baksuppr")
    value = bak_suppr(std::span<const float>(ref), std::span<const float>(deg));
  else if (metric == "sisdr")
    value = si_sdr(std::span<const float>(ref), std::span<const float>(deg));
  else
    throw InvalidInput("eval: metric must be erle, tsos, baksuppr or sisdr");
  std::cout << value << "\n";
  if (!report_path.empty()) {
    MetricReport report;
    report.add(std::filesystem::path(deg_path).stem().string(), metric, value);
    report.write_csv(report_path);
    std::ofstream jf(report_path + ".json");
    jf << report.aggregate_json().dump(2) << "\n";
  }
  return 0;
}

inline int cmd_bench(const std::string& model_path, int frames) {
  Model<float> model = load_weights<float>(model_path);
  StreamEngine<float> engine(model);
  const auto r = rtf_benchmark(engine, frames);
  std::cout << "frames " << r.frames << "\n"
            << "ms_per_frame " << r.ms_per_frame << "\n"
            << "rtf " << r.rtf << "\n";
  return 0;
}

inline int cmd_gradcheck(int bits) {
  bool ok = true;
  auto report = [&](const std::vector<CheckItem>& items) {
    for (const auto& it : items) {
      std::cout << (it.pass() ? "  ok   " : "  FAIL ") << it.name << ": max rel err "
                << it.max_rel_err << " (tol " << it.tolerance << ")\n";
      ok = ok && it.pass();
    }
  };
  if (bits == 64) {
    std::cout << "gradient checks, 64-bit\n";
    report(gradient_check_primitives<double>(1e-5, 1e-5));
    report({gradient_check_full_model<double>(1e-4, 1e-5)});
  } else {
    std::cout << "gradient checks, 32-bit\n";
    report(gradient_check_primitives<float>(1e-3, 1e-2f));
    report({gradient_check_full_model<float>(1e-2, 1e-2f)});
  }
  std::cout << (ok ? "all checks passed\n" : "checks FAILED\n");
  return ok ? 0 : 2;
}

inline int cmd_params(const std::string& config_path) {
  ModelConfig cfg =
      config_path.empty() ? ModelConfig::small() : ModelConfig::from_json(load_json(config_path));
  Model<float> model = build_model<float>(cfg, 1);
  const ShapeSchedule s = shape_schedule(cfg);
  std::cout << "total_parameters " << model.parameter_count() << "\n";
  for (const auto& [section, count] : param_breakdown(model))
    std::cout << "  " << section << " " << count << "\n";
  std::cout << "frequency_schedule " << s.f0 << "->" << s.f_e1 << "->" << s.f_e2 << "->" << s.f_c1
            << "->" << s.f_c2 << " | up " << s.f_dec[0] << "->" << s.f_dec[1] << "->" << s.f_dec[2]
            << "->" << s.f_dec[3] << " (crop " << s.f0 << ")\n";
  std::cout << "bottleneck " << s.flat_dim << " fusion " << cfg.fusion_dim << " embedding "
            << cfg.embedding_dim << " align_dim " << cfg.align_dim << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  CLI::App app{"pvqe: streaming personalized speech enhancement"};
  app.require_subcommand(1);

  std::string model_path, audio_path, mode = "internal", out_path;
  auto* enroll = app.add_subcommand("enroll", "derive a speaker embedding from enrollment audio");
  enroll->add_option("--model", model_path)->required();
  enroll->add_option("--audio", audio_path)->required();
  enroll->add_option("--mode", mode)->check(CLI::IsMember({"internal", "fbank", "zero"}));
  enroll->add_option("--out", out_path)->required();

  std::string mic_path, far_path, emb_path, enh_out;
  auto* enhance = app.add_subcommand("enhance", "enhance a mic recording");
  enhance->add_option("--model", model_path)->required();
  enhance->add_option("--mic", mic_path)->required();
  enhance->add_option("--farend", far_path);
  enhance->add_option("--embedding", emb_path);
  enhance->add_option("--out", enh_out)->required();

  std::string train_cfg, train_out;
  auto* train_toy = app.add_subcommand("train-toy", "desk-scale training on synthetic mixtures");
  train_toy->add_option("--config", train_cfg)->required();
  train_toy->add_option("--out-dir", train_out)->required();

  std::string metric, ref_path, deg_path, report_path;
  auto* eval_cmd = app.add_subcommand("eval", "objective metrics on a wav pair");
  eval_cmd->add_option("--metric", metric)
      ->required()
      ->check(CLI::IsMember({"erle", "tsos", "baksuppr", "sisdr"}));
  eval_cmd->add_option("--ref", ref_path)->required();
  eval_cmd->add_option("--deg", deg_path)->required();
  eval_cmd->add_option("--report", report_path);

  int bench_frames = 100000;
  auto* bench = app.add_subcommand("bench", "real-time factor benchmark");
  bench->add_option("--model", model_path)->required();
  bench->add_option("--frames", bench_frames);

  int bits = 32;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gradcheck->add_option("--bits", bits)->check(CLI::IsMember({32, 64}));

  std::string params_cfg;
  auto* params = app.add_subcommand("params", "parameter count and shape audit");
  params->add_option("--config", params_cfg);

  try {
    std::reverse(args.begin(), args.end());  // CLI11's vector parse pops from the back
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (enroll->parsed()) return cli_detail::cmd_enroll(model_path, audio_path, mode, out_path);
    if (enhance->parsed()) return cli_detail::cmd_enhance(model_path, mic_path, far_path, emb_path, enh_out);
    if (train_toy->parsed()) return cli_detail::cmd_train_toy(train_cfg, train_out);
    if (eval_cmd->parsed()) return cli_detail::cmd_eval(metric, ref_path, deg_path, report_path);
    if (bench->parsed()) return cli_detail::cmd_bench(model_path, bench_frames);
    if (gradcheck->parsed()) return cli_detail::cmd_gradcheck(bits);
    if (params->parsed()) return cli_detail::cmd_params(params_cfg);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(std::move(args));
}

}  // namespace pvqe
