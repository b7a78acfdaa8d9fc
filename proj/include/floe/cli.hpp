#pragma once

// Command-line entry point. Subcommands: generate | train | evaluate |
// gradcheck | wam-export. Every option name doubles as a config-file key
// (--config loads a flat key=value file; command-line flags win, unknown
// keys are fatal). Each run echoes its fully resolved configuration to a
// sidecar <out>.config so results are reproducible from artifacts alone.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "floe/eval.hpp"
#include "floe/gradcheck.hpp"
#include "floe/synth.hpp"
#include "floe/train.hpp"

namespace floe {

namespace cli_detail {

// Flat key=value file -> "--key=value" tokens. Values may be double-quoted
// (the sidecar writer quotes strings); '#' starts a comment line.
inline std::vector<std::string> load_config_tokens(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open config file: " + path);
  auto trim = [](std::string t) {
    const char* ws = " \t\r";
    const auto b = t.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    const auto e = t.find_last_not_of(ws);
    return t.substr(b, e - b + 1);
  };
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("malformed config line (expected key=value): " + line);
    const std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    if (key.empty()) throw ConfigError("empty key in config line: " + line);
    if (key == "config") continue;  // a sidecar may echo its own provenance
    tokens.push_back("--" + key + "=" + val);
  }
  return tokens;
}

inline void write_sidecar(const CLI::App& sub, const std::string& out_path) {
  std::ofstream os(out_path + ".config", std::ios::trunc);
  if (!os) throw IoError("cannot write config sidecar: " + out_path + ".config");
  os << sub.config_to_str(true, false);
}

struct NormKeys {
  double siv = 50, wind = 40, t2m_lo = -50, t2m_hi = 30, sic_lo = 0, sic_hi = 1;

  void add_options(CLI::App* app) {
    app->add_option("--norm_siv", siv, "nominal |drift| bound, km/day");
    app->add_option("--norm_wind", wind, "nominal |wind| bound, m/s");
    app->add_option("--norm_t2m_lo", t2m_lo, "nominal air temperature lower bound, degC");
    app->add_option("--norm_t2m_hi", t2m_hi, "nominal air temperature upper bound, degC");
    app->add_option("--norm_sic_lo", sic_lo, "nominal concentration lower bound");
    app->add_option("--norm_sic_hi", sic_hi, "nominal concentration upper bound");
  }

  // Coordinate ranges come from the data itself (the grid extent).
  NormSpec build(const GridStack& stack) const {
    NormSpec n = NormSpec::defaults(stack.h, stack.w);
    n.ranges[Var::SivU] = {-siv, siv};
    n.ranges[Var::SivV] = {-siv, siv};
    n.ranges[Var::WindU] = {-wind, wind};
    n.ranges[Var::WindV] = {-wind, wind};
    n.ranges[Var::T2m] = {t2m_lo, t2m_hi};
    n.ranges[Var::Sic] = {sic_lo, sic_hi};
    for (Var v : {Var::CoordX, Var::CoordY}) {
      if (!stack.has(v)) continue;
      const Grid& g = stack.at(0, v);
      float lo = 0, hi = 0;
      bool any = false;
      for (size_t i = 0; i < g.v.size(); ++i) {
        if (!g.ok[i]) continue;
        if (!any) {
          lo = hi = g.v[i];
          any = true;
        } else {
          lo = std::min(lo, g.v[i]);
          hi = std::max(hi, g.v[i]);
        }
      }
      if (any && hi > lo) n.ranges[v] = {lo, hi};
    }
    return n;
  }
};

struct SplitKeys {
  double ratio = 0.8;
  uint64_t seed = 42;
  int coast_buffer = 2;

  void add_options(CLI::App* app) {
    app->add_option("--split_ratio", ratio, "train fraction of the dataset");
    app->add_option("--split_seed", seed, "seed for the random train/val split");
    app->add_option("--coast_buffer", coast_buffer, "coastal exclusion buffer, pixels");
  }
};

template <class T>
int run_train_typed(const std::string& data, const std::string& resume,
                    const std::string& model_kind, const std::string& out,
                    TrainConfig tc, const SplitKeys& sk, const NormKeys& nk) {
  GridStack stack = read_stack(data);
  NormSpec norm = nk.build(stack);
  auto samples = build_samples(stack, norm, sk.coast_buffer);
  if (samples.size() < 2)
    throw DataError(strprintf("dataset yields only %zu samples; need at least 2",
                              samples.size()));
  Split split = split_dataset(samples.size(), sk.ratio, sk.seed);
  if (split.train.empty() || split.val.empty())
    throw DataError("split leaves an empty train or validation set; adjust split_ratio");

  ModelState<T> model = [&] {
    if (!resume.empty()) return load_model<T>(resume);
    ModelSpec ms;
    ms.kind = model_kind_from_name(model_kind);
    if (ms.kind == ModelKind::Persistence || ms.kind == ModelKind::Linreg)
      throw ConfigError("model '" + model_kind + "' has no trainable parameters; "
                        "use the evaluate subcommand");
    ms.h = stack.h;
    ms.w = stack.w;
    ms.seed = tc.seed;
    return ModelState<T>::build(ms);
  }();

  TrainerState<T> trainer;
  if (!resume.empty()) {
    RawCheckpoint ck = read_checkpoint(resume);
    trainer = load_trainer_state<T>(ck, model);
  }

  tc.out = out;
  TrainResult<T> res = train(model, samples, split, tc, std::move(trainer));
  const EpochRow& last = res.history.back();
  std::printf("trained %s for %d epoch(s): train %.6g  val %.6g  (best val %.6g)\n",
              model_kind_name(model.spec.kind), static_cast<int>(res.history.size()),
              last.train_loss, last.val_loss, res.trainer.best_val);
  std::printf("checkpoint: %s\nbest:       %s.best\nhistory:    %s\n", out.c_str(),
              out.c_str(), (tc.history.empty() ? out + ".history" : tc.history).c_str());
  return 0;
}

}  // namespace cli_detail

inline int run_cli(std::vector<std::string> args) {
  using namespace cli_detail;

  CLI::App app{"sea-ice concentration and drift forecasting engine"};
  app.require_subcommand(1);
  // resolved-config sidecars need every option's default captured; take-last
  // lets command-line flags override config-file values
  app.option_defaults()->always_capture_default(true);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  // ---- generate ----------------------------------------------------------
  auto* gen = app.add_subcommand("generate", "synthesize a coupled sea-ice world (SIGD)");
  std::string gen_config;
  gen->add_option("--config", gen_config, "flat key=value configuration file");
  WorldConfig wc;
  std::string gen_out, gen_start = "2020-01-01";
  gen->add_option("--out", gen_out, "output SIGD path")->required();
  gen->add_option("--height", wc.h, "grid height");
  gen->add_option("--width", wc.w, "grid width");
  gen->add_option("--days", wc.days, "number of days");
  gen->add_option("--seed", wc.seed, "world seed");
  gen->add_option("--alpha", wc.alpha, "drift fraction of wind speed");
  gen->add_option("--theta", wc.theta_deg, "drift turning angle, degrees");
  gen->add_option("--k_freeze", wc.k_freeze, "freeze/melt rate, fraction/day/degC");
  gen->add_option("--rho", wc.rho, "wind AR(1) persistence");
  gen->add_option("--wind_sigma", wc.wind_sigma, "wind std per component, m/s");
  gen->add_option("--wind_modes", wc.wind_modes, "Fourier modes per innovation");
  gen->add_option("--wind_clamp", wc.wind_clamp, "wind magnitude saturation, m/s");
  gen->add_option("--current_u", wc.current_u, "background current u, km/day");
  gen->add_option("--current_v", wc.current_v, "background current v, km/day");
  gen->add_option("--t2m_mean", wc.t2m_mean, "mean air temperature, degC");
  gen->add_option("--t2m_amp", wc.t2m_amp, "seasonal temperature amplitude, degC");
  gen->add_option("--t2m_grad", wc.t2m_grad, "north-south temperature gradient, degC");
  gen->add_option("--t2m_noise", wc.t2m_noise, "temperature noise std, degC");
  gen->add_option("--ice_edge", wc.ice_edge, "initial ice edge, fraction of height");
  gen->add_option("--land_rows", wc.land_rows, "southern land rows");
  gen->add_flag("--periodic", wc.periodic, "periodic advection boundaries");
  gen->add_option("--cell_km", wc.cell_km, "grid cell size, km");
  gen->add_option("--start", gen_start, "start date, YYYY-MM-DD");

  // ---- train --------------------------------------------------------------
  auto* trn = app.add_subcommand("train", "train a forecasting model");
  std::string trn_config;
  trn->add_option("--config", trn_config, "flat key=value configuration file");
  std::string trn_data, trn_out, trn_model = "his_unet", trn_resume, trn_history;
  std::string trn_precision = "single";
  TrainConfig tc;
  tc.epochs = 100;
  SplitKeys trn_split;
  NormKeys trn_norm;
  trn->add_option("--data", trn_data, "input SIGD dataset")->required();
  trn->add_option("--out", trn_out, "checkpoint output path")->required();
  trn->add_option("--model", trn_model,
                  "his_unet | eb_unet | lb_unet | unet | fcn7 | cnn_dense");
  trn->add_option("--epochs", tc.epochs, "epochs to run (additional when resuming)");
  trn->add_option("--lr", tc.lr, "learning rate");
  trn->add_option("--beta", tc.beta, "concentration weight in the loss");
  trn->add_option("--batch", tc.batch, "batch size");
  trn->add_option("--seed", tc.seed, "run seed (init + epoch shuffles)");
  trn->add_option("--precision", trn_precision, "single | double");
  trn->add_option("--ckpt_every", tc.ckpt_every, "write a checkpoint every N epochs");
  trn->add_option("--resume", trn_resume, "checkpoint to continue from");
  trn->add_option("--history", trn_history, "history table path");
  trn_split.add_options(trn);
  trn_norm.add_options(trn);

  // ---- evaluate -----------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate", "score a model on a dataset split");
  std::string ev_config;
  ev->add_option("--config", ev_config, "flat key=value configuration file");
  std::string ev_data, ev_model, ev_out, ev_split = "val", ev_regions, ev_id;
  SplitKeys ev_splitk;
  NormKeys ev_norm;
  ev->add_option("--data", ev_data, "input SIGD dataset")->required();
  ev->add_option("--model", ev_model,
                 "checkpoint path, or 'persistence' / 'linreg' (fit on the train split)")
      ->required();
  ev->add_option("--out", ev_out, "metrics table output path")->required();
  ev->add_option("--split", ev_split, "val | train | all");
  ev->add_option("--regions", ev_regions, "'auto' or a region raster (SIGD)");
  ev->add_option("--model_id", ev_id, "label for the metrics table");
  ev_splitk.add_options(ev);
  ev_norm.add_options(ev);

  // ---- gradcheck ----------------------------------------------------------
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_config;
  gc->add_option("--config", gc_config, "flat key=value configuration file");
  int gc_seeds = 5;
  double gc_eps = 1e-5;
  std::string gc_out;
  gc->add_option("--seeds", gc_seeds, "random seeds per op");
  gc->add_option("--eps", gc_eps, "finite-difference step");
  gc->add_option("--out", gc_out, "report path (optional)");

  // ---- wam-export ---------------------------------------------------------
  auto* wx = app.add_subcommand("wam-export", "export WAM weight maps from a checkpoint");
  std::string wx_config;
  wx->add_option("--config", wx_config, "flat key=value configuration file");
  std::string wx_ckpt, wx_out;
  wx->add_option("--checkpoint", wx_ckpt, "his_unet checkpoint")->required();
  wx->add_option("--out", wx_out, "output path prefix")->required();

  // expand --config <file> into option tokens placed right after the
  // subcommand, so explicit flags (parsed later, take-last) win
  if (!args.empty()) {
    std::string cfg_path;
    for (size_t i = 1; i < args.size(); ++i) {
      if (args[i] == "--config" && i + 1 < args.size()) cfg_path = args[i + 1];
      else if (args[i].rfind("--config=", 0) == 0) cfg_path = args[i].substr(9);
    }
    if (!cfg_path.empty()) {
      auto tokens = cli_detail::load_config_tokens(cfg_path);
      args.insert(args.begin() + 1, tokens.begin(), tokens.end());
    }
  }

  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    throw ConfigError(std::string(e.get_name()) + ": " + e.what());
  }

  if (gen->parsed()) {
    wc.start = parse_date(gen_start);
    wc.validate();
    GridStack world = gen_world(wc);
    write_stack(gen_out, world);
    write_sidecar(*gen, gen_out);
    std::printf("wrote %s: %dx%d grid, %d day(s), %zu variables\n", gen_out.c_str(),
                world.h, world.w, world.days(), world.vars.size());
    return 0;
  }

  if (trn->parsed()) {
    tc.precision = precision_from_name(trn_precision);
    tc.history = trn_history;
    const int rc = tc.precision == Precision::Single
                       ? run_train_typed<float>(trn_data, trn_resume, trn_model, trn_out,
                                                tc, trn_split, trn_norm)
                       : run_train_typed<double>(trn_data, trn_resume, trn_model, trn_out,
                                                 tc, trn_split, trn_norm);
    write_sidecar(*trn, trn_out);
    return rc;
  }

  if (ev->parsed()) {
    GridStack stack = read_stack(ev_data);
    NormSpec norm = ev_norm.build(stack);
    auto samples = build_samples(stack, norm, ev_splitk.coast_buffer);
    if (samples.empty()) throw DataError("dataset yields no samples");
    Split split = split_dataset(samples.size(), ev_splitk.ratio, ev_splitk.seed);

    std::vector<size_t> idx;
    if (ev_split == "val") {
      idx = split.val;
    } else if (ev_split == "train") {
      idx = split.train;
    } else if (ev_split == "all") {
      idx.resize(samples.size());
      for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    } else {
      throw ConfigError("split must be val, train, or all, got '" + ev_split + "'");
    }
    if (idx.empty()) throw DataError("selected split is empty");

    RegionMask regions;
    if (ev_regions == "auto") {
      std::vector<uint8_t> ocean(static_cast<size_t>(stack.h) * stack.w, 1);
      if (stack.has(Var::Land)) {
        const Grid& land = stack.at(0, Var::Land);
        for (size_t i = 0; i < ocean.size(); ++i) ocean[i] = land.v[i] == 0.f;
      }
      regions = make_region_partition(stack.h, stack.w, ocean);
    } else if (!ev_regions.empty()) {
      regions = read_region_mask(ev_regions);
      if (regions.h != stack.h || regions.w != stack.w)
        throw ShapeError("region raster dimensions do not match the dataset");
    }

    PredictFn predict;
    std::string model_id = ev_id;
    if (ev_model == "persistence") {
      predict = persistence_predictor();
      if (model_id.empty()) model_id = "persistence";
    } else if (ev_model == "linreg") {
      predict = linreg_predictor(linreg_fit(samples, split.train));
      if (model_id.empty()) model_id = "linreg";
    } else {
      auto state = std::make_shared<ModelState<double>>(load_model<double>(ev_model, false));
      if (model_id.empty()) model_id = model_kind_name(state->spec.kind);
      predict = neural_predictor<double>(state);
    }

    auto records = evaluate(predict, samples, idx, regions, norm, model_id);
    write_metrics(ev_out, records);
    write_sidecar(*ev, ev_out);
    for (const auto& r : records)
      if (r.scope == "overall")
        std::printf("%s %s: R %s  RMSE %.6g  MAE %.6g  (n=%ld)\n", model_id.c_str(),
                    r.variable.c_str(),
                    r.r_defined ? strprintf("%.4f", r.r).c_str() : "undef", r.rmse, r.mae,
                    r.n);
    std::printf("metrics: %s\n", ev_out.c_str());
    return 0;
  }

  if (gc->parsed()) {
    const auto t0 = std::chrono::steady_clock::now();
    auto results = run_gradcheck(gc_seeds, gc_eps);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    bool all_pass = true;
    std::string report;
    for (const auto& r : results) {
      report += strprintf("%-22s max_rel_err %.3e  %s\n", r.op.c_str(), r.max_rel_err,
                          r.pass ? "PASS" : "FAIL");
      all_pass = all_pass && r.pass;
    }
    report += strprintf("gradcheck: %zu ops, %d seeds, %.2f s, tolerance %g -> %s\n",
                        results.size(), gc_seeds, secs, kGradCheckTol,
                        all_pass ? "PASS" : "FAIL");
    std::fputs(report.c_str(), stdout);
    if (!gc_out.empty()) {
      std::ofstream os(gc_out, std::ios::trunc);
      if (!os) throw IoError("cannot write report: " + gc_out);
      os << report;
      write_sidecar(*gc, gc_out);
    }
    return all_pass ? 0 : 7;
  }

  if (wx->parsed()) {
    auto state = load_model<double>(wx_ckpt, false);
    auto paths = write_wam_maps(wx_out, state);
    write_sidecar(*wx, wx_out);
    for (const auto& p : paths) std::printf("wrote %s\n", p.c_str());
    return 0;
  }

  return 0;
}

// Maps structured errors onto distinct exit codes with one machine-parsable
// line on stderr: "error: <code>: <message>".
inline int run_cli_catching(std::vector<std::string> args) {
  try {
    return run_cli(std::move(args));
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s: %s\n", e.code(), e.what());
    const std::string code = e.code();
    if (code == "config") return 2;
    if (code == "io") return 3;
    if (code == "shape") return 4;
    if (code == "data") return 5;
    if (code == "cfl") return 6;
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: internal: %s\n", e.what());
    return 1;
  }
}

inline int run_cli(int argc, char** argv) {
  return run_cli_catching(std::vector<std::string>(argv + 1, argv + argc));
}

}  // namespace floe
