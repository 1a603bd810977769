// SPDX-License-Identifier: Apache-2.0
//
// cinbench: equivalence checks, FLOP counts and throughput of continual
// models described by JSON configs.
//
// Exit codes: 0 pass, 1 tolerance or measurement failure, 2 config or
// usage error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "cin/bench/report.hpp"

namespace {

using namespace cin;
using namespace cin::bench;

struct Options {
  std::string model;
  std::size_t length = 0;
  std::uint64_t seed = 0;
  double tol = 1e-4;
  bool negative_control = false;
  std::string mode = "step";
  std::size_t warmup = 2;
  std::size_t repeats = 5;
  std::string report;
  bool csv = false;
};

Mode parse_mode(const std::string& s) {
  if (s == "step") return Mode::kStep;
  if (s == "offline") return Mode::kOffline;
  throw ConfigError("--mode", "expected step or offline");
}

void print_flops(const FlopCount& f) {
  std::printf("%-40s %14s %14s\n", "layer", "MACs", "FLOPs");
  for (const auto& l : f.layers) {
    std::printf("%-40s %14llu %14llu\n", l.name.c_str(), static_cast<unsigned long long>(l.cost.macs),
                static_cast<unsigned long long>(l.cost.flops()));
  }
  std::printf("%-40s %14llu %14llu\n", "total", static_cast<unsigned long long>(f.total.macs),
              static_cast<unsigned long long>(f.total.flops()));
}

template <typename T>
Report run(const std::string& command, const ModelConfig& cfg, const Options& o) {
  const BuiltModel<T> m = build_model<T>(cfg);
  Report r;
  r.command = command;
  r.model = cfg.name;
  r.dtype = cfg.dtype;
  r.length = o.length;
  if (command == "check") {
    r.mode = Mode::kStep;
    r.equivalence = check_equivalence(m, o.length, o.seed, o.tol, o.negative_control);
    r.pass = r.equivalence->pass;
    if (!o.csv) {
      const auto& e = *r.equivalence;
      std::printf("model %s  T=%zu  seed=%llu  offline frames=%zu  step frames=%zu\n", cfg.name.c_str(), o.length,
                  static_cast<unsigned long long>(o.seed), e.offline_frames, e.step_frames);
      std::printf("max_abs=%.3e  max_rel=%.3e  tol=%.1e  %s\n", e.max_abs, e.max_rel, e.tol, e.pass ? "PASS" : "FAIL");
    }
  } else if (command == "flops") {
    r.mode = parse_mode(o.mode);
    r.flops = count_flops(m, r.mode, o.length);
    if (!o.csv) {
      std::printf("model %s  mode=%s  T=%zu  predictions=%zu\n", cfg.name.c_str(), to_string(r.mode), o.length,
                  r.flops->predictions);
      print_flops(*r.flops);
    }
  } else {
    r.mode = parse_mode(o.mode);
    r.throughput = measure_throughput(m, r.mode, o.length, o.warmup, o.repeats);
    r.pass = !r.throughput->no_data && r.throughput->median > 0;
    if (!o.csv) {
      const auto& t = *r.throughput;
      if (t.no_data) {
        std::printf("model %s  mode=%s  T=0: no data\n", cfg.name.c_str(), to_string(r.mode));
      } else {
        std::printf("model %s  mode=%s  T=%zu  median %.1f %s  (%.1f preds/s, %zu repeats, %zu warm-up)\n",
                    cfg.name.c_str(), to_string(r.mode), o.length, t.median,
                    t.mode == Mode::kStep ? "steps/s" : "clips/s", t.preds_per_second, t.repeats, t.warmup);
      }
    }
  }
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual inference benchmark: equivalence, FLOPs and throughput"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--model", o.model, "model config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--length,-T", o.length, "number of input frames T")->required();
    sub->add_option("--report", o.report, "write the report JSON to this file");
    sub->add_flag("--csv", o.csv, "print a one-line CSV summary instead of text");
  };
  auto* check = app.add_subcommand("check", "compare clip mode against step mode on random input");
  common(check);
  check->add_option("--seed", o.seed, "input seed");
  check->add_option("--tol", o.tol, "relative tolerance");
  check->add_flag("--negative-control", o.negative_control,
                  "compare against the end-padded offline variant (expected to fail)");

  auto* flops = app.add_subcommand("flops", "analytic FLOP/MAC counts per layer");
  common(flops);
  flops->add_option("--mode", o.mode, "step or offline")->check(CLI::IsMember({"step", "offline"}));

  auto* thr = app.add_subcommand("throughput", "single-stream wall-clock throughput");
  common(thr);
  thr->add_option("--mode", o.mode, "step or offline")->check(CLI::IsMember({"step", "offline"}));
  thr->add_option("--warmup", o.warmup, "discarded warm-up repeats");
  thr->add_option("--repeats", o.repeats, "timed repeats (>= 3)")->check(CLI::Range(3, 1 << 20));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    const ModelConfig cfg = load_config(o.model);
    const Report r = cfg.dtype == DType::kF32 ? run<float>(command, cfg, o) : run<double>(command, cfg, o);
    if (o.csv) std::cout << report_csv(r) << "\n";
    if (!o.report.empty()) {
      std::ofstream out(o.report);
      if (!out) {
        std::cerr << "error: cannot write report '" << o.report << "'\n";
        return 2;
      }
      out << report_json(r).dump(2) << "\n";
    }
    return r.pass ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
