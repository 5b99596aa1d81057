#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "handadapt/cli/experiment.hpp"

namespace fs = std::filesystem;
using namespace handadapt;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

fs::path out_dir(const ExperimentConfig& c, const std::string& flag, const fs::path& fallback) {
  return flag.empty() ? c.output_dir / fallback : fs::path(flag);
}

void print_metrics(const MetricsRecord& m) {
  std::cout << std::setprecision(6) << "avg " << m.avg << "  pck_auc " << m.pck_auc << "  iou " << m.iou << "  mpe_px "
            << m.mpe_px << "  (" << m.per_instance.size() << " instances)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Confidence-aware self-training for hand keypoints and masks"};
  app.require_subcommand(1);

  std::string config, out, method, init, split = "val", domain = "target";
  std::vector<std::string> ckpts, baselines;
  std::uint64_t gc_seed = 1;

  auto* gen = app.add_subcommand("gen-data", "Materialize source and target datasets");
  gen->add_option("--config", config, "Experiment JSON")->required();
  gen->add_option("--out", out, "Output directory (default <output_dir>/data)");

  auto* src = app.add_subcommand("train-source", "Supervised source training");
  src->add_option("--config", config, "Experiment JSON")->required();
  src->add_option("--out", out, "Output directory (default <output_dir>)");

  auto* ada = app.add_subcommand("adapt", "Run one adaptation method");
  ada->add_option("--config", config, "Experiment JSON")->required();
  ada->add_option("--method", method, "source_only|gac|gac_mt|gac_distill|cgac|gac_uma")->required();
  ada->add_option("--init", init, "Source checkpoint")->required();
  ada->add_option("--out", out, "Output directory (default <output_dir>/<method>)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint or an ensemble of checkpoints");
  ev->add_option("--config", config, "Experiment JSON")->required();
  ev->add_option("--ckpt", ckpts, "Checkpoint; repeat to average an ensemble")->required();
  ev->add_option("--split", split, "val|test")->check(CLI::IsMember({"val", "test"}));
  ev->add_option("--domain", domain, "source|target")->check(CLI::IsMember({"source", "target"}));
  ev->add_option("--out", out, "Output directory (default <output_dir>/eval/<domain>_<split>)");

  auto* an = app.add_subcommand("analyze", "Disagreement correlation and bone-length KDEs");
  an->add_option("--config", config, "Experiment JSON")->required();
  an->add_option("--ckpts", ckpts, "The two teacher checkpoints")->required()->expected(2);
  an->add_option("--baseline", baselines, "name=CKPT of a comparison model; repeatable");
  an->add_option("--out", out, "Output directory (default <output_dir>/analysis)");

  auto* pipe = app.add_subcommand("pipeline", "train-source, adapt and target test evaluation in one go");
  pipe->add_option("--config", config, "Experiment JSON")->required();
  pipe->add_option("--method", method, "Adaptation method (default: train.method)");
  pipe->add_option("--out", out, "Output directory (default <output_dir>)");

  auto* show = app.add_subcommand("show-config", "Print the resolved config (defaults when --config is absent)");
  show->add_option("--config", config, "Experiment JSON");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the full losses");
  gc->add_option("--seed", gc_seed, "Seed of the random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gc->parsed()) {
      const auto r = run_gradcheck_suite(gc_seed);
      for (const auto& rep : r.reports) {
        std::cout << (rep.passed() ? "ok   " : "FAIL ") << std::left << std::setw(46) << rep.name << " checked "
                  << std::setw(4) << rep.checked << " excluded " << std::setw(3) << rep.excluded << " max_rel_err "
                  << std::scientific << std::setprecision(3) << rep.max_rel_error << std::defaultfloat << '\n';
      }
      std::cout << (r.passed() ? "gradcheck passed\n" : "gradcheck FAILED\n");
      return r.passed() ? kExitOk : kExitNumerical;
    }

    if (show->parsed()) {
      const ExperimentConfig c = config.empty() ? ExperimentConfig{} : load_experiment(config);
      std::cout << to_json(c).dump(2) << '\n';
      return kExitOk;
    }

    const ExperimentConfig c = load_experiment(config);
    if (gen->parsed()) {
      const fs::path d = out_dir(c, out, "data");
      gen_data(c, d);
      std::cout << "datasets written to " << d.string() << '\n';
    } else if (src->parsed()) {
      const fs::path d = out.empty() ? c.output_dir : fs::path(out);
      train_source_step(c, d);
      std::cout << "wrote " << (d / "source.ckpt").string() << '\n';
    } else if (ada->parsed()) {
      const Method m = parse_method(method);
      const fs::path d = out_dir(c, out, method_name(m));
      const std::vector<fs::path> paths{init};
      adapt_step(c, m, load_networks(paths).front(), d);
      std::cout << "wrote " << d.string() << '\n';
    } else if (ev->parsed()) {
      const std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      const auto nets = load_networks(paths);
      const fs::path d = out_dir(c, out, fs::path("eval") / (domain + "_" + split));
      print_metrics(eval_step(c, nets, parse_split(split), domain, d));
      std::cout << "wrote " << (d / "metrics.json").string() << '\n';
    } else if (an->parsed()) {
      const std::vector<fs::path> paths(ckpts.begin(), ckpts.end());
      const auto teachers = load_networks(paths);
      std::vector<std::pair<std::string, NetParams>> base;
      for (const auto& b : baselines) {
        const auto eq = b.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--baseline expects name=CKPT, got '" + b + "'");
        const std::vector<fs::path> one{b.substr(eq + 1)};
        base.emplace_back(b.substr(0, eq), load_networks(one).front());
      }
      const fs::path d = out_dir(c, out, "analysis");
      const auto a = analyze_step(c, teachers[0], teachers[1], base, d);
      std::cout << "spearman_rho " << a.correlation.spearman_rho << " over " << a.metrics.per_instance.size()
                << " target val instances\n";
      for (const auto& [name, l1] : a.kde_l1) std::cout << "kde L1 " << name << " vs ground truth " << l1 << '\n';
      std::cout << "wrote " << d.string() << '\n';
    } else if (pipe->parsed()) {
      const Method m = method.empty() ? c.train.method : parse_method(method);
      const fs::path d = out.empty() ? c.output_dir : fs::path(out);
      print_metrics(run_pipeline(c, m, d, [](const std::string& s) { std::cerr << "[pipeline] " << s << '\n'; }));
      std::cout << "wrote " << (d / method_name(m) / "eval" / "metrics.json").string() << '\n';
    }
    return kExitOk;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
}
