// Command-line front end: solve single instances, run the experiment matrix,
// query the brute-force oracle, generate instances, and export scatter data.
// Exit codes: 0 success, 2 input error, 3 timeout with partial result,
// 4 backend error, 1 anything else.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "stabopt/harness.hpp"
#include "stabopt/smtlib.hpp"

namespace {

using nlohmann::json;
using namespace stabopt;

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write to " + path);
  out << text;
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
  return j;
}

struct SolveOptions {
  std::string model_path, spec_path, out_path;
  std::string eps, delta, bo_candidates, bo_counterexamples, backend, solver_cmd;
  std::optional<std::uint64_t> seed;
  std::optional<double> budget_s;
  bool no_timings = false;
};

ProblemSpec resolve_spec(const SolveOptions& opt) {
  std::optional<ProblemSpec> spec;
  if (!opt.spec_path.empty()) spec = load_spec(opt.spec_path);
  if (!opt.model_path.empty()) {
    json mj = load_json_file(opt.model_path);
    PwlModel model = model_from_json(mj);
    if (!spec) {
      json stub;
      stub["model"] = mj;
      spec = spec_from_json(stub, "", std::filesystem::path(opt.model_path).stem().string());
      if (mj.contains("name")) spec->name = mj.at("name").get<std::string>();
    } else {
      if (model.input_dim() != spec->domain.dim())
        throw InputError("--model dimension does not match the spec's domain");
      spec->model = std::move(model);
    }
  }
  if (!spec) throw InputError("give --model, --spec, or both");

  if (!opt.eps.empty()) spec->solver.epsilon = parse_rational(opt.eps);
  if (!opt.delta.empty()) spec->solver.delta = parse_rational(opt.delta);
  auto parse_switch = [](const std::string& s, const char* flag) {
    if (s == "on") return true;
    if (s == "off") return false;
    throw InputError(std::string(flag) + " expects on|off");
  };
  if (!opt.bo_candidates.empty())
    spec->solver.use_bo_candidates = parse_switch(opt.bo_candidates, "--bo-candidates");
  if (!opt.bo_counterexamples.empty())
    spec->solver.use_bo_counterexamples =
        parse_switch(opt.bo_counterexamples, "--bo-counterexamples");
  if (opt.seed) spec->solver.seed = *opt.seed;
  if (!opt.backend.empty()) {
    if (opt.backend == "builtin")
      spec->solver.external_backend = false;
    else if (opt.backend == "external")
      spec->solver.external_backend = true;
    else
      throw InputError("--backend expects builtin|external");
  }
  if (!opt.solver_cmd.empty()) spec->solver.solver_cmd = opt.solver_cmd;
  if (spec->solver.external_backend && spec->solver.solver_cmd.empty())
    throw InputError("external backend needs --solver-cmd");
  if (opt.budget_s) spec->budget_s = *opt.budget_s;
  return std::move(*spec);
}

int cmd_solve(const SolveOptions& opt) {
  ProblemSpec spec = resolve_spec(opt);
  RunResult run = run_solve(spec);
  if (opt.no_timings) zero_timers(run.indicators);
  write_json(opt.out_path, run_result_to_json(run));
  return run.result.timed_out ? 3 : 0;
}

int cmd_matrix(const std::string& dir, const std::string& out_path,
               std::optional<double> budget_s, std::size_t threads, bool no_timings) {
  std::vector<std::filesystem::path> files;
  if (!std::filesystem::is_directory(dir)) throw InputError(dir + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json")
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw InputError("no .json instance specs in " + dir);
  std::vector<ProblemSpec> instances;
  for (const auto& f : files) {
    instances.push_back(load_spec(f.string()));
    if (budget_s) instances.back().budget_s = *budget_s;
  }
  if (threads == 0)
    threads = std::min<std::size_t>(4, std::max(1u, std::thread::hardware_concurrency()));
  write_text(out_path, run_matrix(instances, threads, !no_timings));
  return 0;
}

int cmd_oracle(const SolveOptions& opt, const std::string& pitch) {
  ProblemSpec spec = resolve_spec(opt);
  OracleResult res = grid_oracle(spec.model, spec.guard, spec.domain, parse_rational(pitch));
  json j;
  j["value"] = res.value;
  j["argmax"] = rat_vec_to_json(res.argmax);
  j["error_bound"] = res.error_bound;
  write_json(opt.out_path, j);
  return 0;
}

int cmd_gen(const std::string& kind, std::uint64_t seed, std::size_t dim,
            const std::string& widths_arg, const std::string& value, const std::string& out_path) {
  std::optional<Instance> inst;
  if (kind == "hat") {
    inst = make_hat();
  } else if (kind == "pyramid") {
    inst = make_pyramid();
  } else if (kind == "constant") {
    inst = make_constant(value.empty() ? Rational(5) : parse_rational(value));
  } else if (kind == "random_relu") {
    std::vector<std::size_t> widths;
    std::istringstream in(widths_arg.empty() ? "6" : widths_arg);
    std::string tok;
    while (std::getline(in, tok, ',')) widths.push_back(std::stoul(tok));
    inst = make_random_relu(dim, widths, seed);
  } else {
    throw InputError("unknown kind '" + kind + "' (hat|pyramid|constant|random_relu)");
  }
  write_json(out_path, instance_to_json(*inst));
  return 0;
}

int cmd_scatter(const std::string& run_path, const std::string& out_path) {
  json j = load_json_file(run_path);
  write_text(out_path, scatter_csv(pairs_from_json(j)));
  return 0;
}

int cmd_smtlib_serve() {
  std::string script((std::istreambuf_iterator<char>(std::cin)),
                     std::istreambuf_iterator<char>());
  std::cout << smtlib::serve(script);
  return 0;
}

json error_record(const std::string& kind, const std::string& message) {
  json j;
  j["error"] = {{"kind", kind}, {"message", message}};
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"certified stable optimization of piecewise-linear models"};
  app.require_subcommand(1);

  SolveOptions sopt;
  auto add_spec_flags = [&](CLI::App* cmd) {
    cmd->add_option("--model", sopt.model_path, "model JSON file");
    cmd->add_option("--spec", sopt.spec_path, "problem spec JSON file");
    cmd->add_option("--out", sopt.out_path, "output path (default stdout)");
  };

  CLI::App* solve = app.add_subcommand("solve", "certify an optimal stable threshold");
  add_spec_flags(solve);
  solve->add_option("--eps", sopt.eps, "accuracy epsilon (rational)");
  solve->add_option("--delta", sopt.delta, "lemma relaxation delta (rational)");
  solve->add_option("--bo-candidates", sopt.bo_candidates, "on|off");
  solve->add_option("--bo-counterexamples", sopt.bo_counterexamples, "on|off");
  std::uint64_t seed_arg = 0;
  CLI::Option* seed_opt = solve->add_option("--seed", seed_arg, "RNG seed");
  solve->add_option("--backend", sopt.backend, "builtin|external");
  solve->add_option("--solver-cmd", sopt.solver_cmd, "external SMT solver command");
  double budget_arg = 0;
  CLI::Option* budget_opt = solve->add_option("--budget-s", budget_arg, "wall-clock budget");
  solve->add_flag("--no-timings", sopt.no_timings, "zero all timer fields");

  CLI::App* matrix = app.add_subcommand("matrix", "run the BO on/off experiment matrix");
  std::string instances_dir, matrix_out;
  double matrix_budget = 0;
  bool matrix_budget_set = false, matrix_no_timings = false;
  std::size_t matrix_threads = 0;
  matrix->add_option("--instances", instances_dir, "directory of instance spec JSON files")
      ->required();
  matrix->add_option("--out", matrix_out, "output CSV path (default stdout)");
  matrix->add_option("--budget-s", matrix_budget, "per-run wall-clock budget")
      ->each([&](const std::string&) { matrix_budget_set = true; });
  matrix->add_option("--threads", matrix_threads, "worker threads");
  matrix->add_flag("--no-timings", matrix_no_timings, "zero all timer fields");

  CLI::App* oracle = app.add_subcommand("oracle", "brute-force grid value of the objective");
  add_spec_flags(oracle);
  std::string pitch = "1/1000";
  oracle->add_option("--pitch", pitch, "grid pitch (rational)");

  CLI::App* gen = app.add_subcommand("gen", "generate a test instance");
  std::string gen_kind, gen_widths, gen_value, gen_out;
  std::uint64_t gen_seed = 1;
  std::size_t gen_dim = 2;
  gen->add_option("--kind", gen_kind, "hat|pyramid|constant|random_relu")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--dim", gen_dim, "input dimension (random_relu)");
  gen->add_option("--widths", gen_widths, "comma-separated hidden widths (random_relu)");
  gen->add_option("--value", gen_value, "constant value (constant)");
  gen->add_option("--out", gen_out, "output path (default stdout)");

  CLI::App* scatter = app.add_subcommand("scatter", "export candidate/counter-example pairs");
  std::string run_path, scatter_out;
  scatter->add_option("--run", run_path, "result JSON from solve")->required();
  scatter->add_option("--out", scatter_out, "output CSV path (default stdout)");

  CLI::App* serve = app.add_subcommand("smtlib-serve", "answer one SMT-LIB2 script on stdin");
  serve->group("");  // hidden: used by the process-protocol tests

  CLI11_PARSE(app, argc, argv);

  int code = 0;
  std::string record_out = sopt.out_path;
  try {
    if (solve->parsed()) {
      if (*seed_opt) sopt.seed = seed_arg;
      if (*budget_opt) sopt.budget_s = budget_arg;
      code = cmd_solve(sopt);
    } else if (matrix->parsed()) {
      record_out = matrix_out;
      code = cmd_matrix(instances_dir, matrix_out,
                        matrix_budget_set ? std::optional<double>(matrix_budget) : std::nullopt,
                        matrix_threads, matrix_no_timings);
    } else if (oracle->parsed()) {
      code = cmd_oracle(sopt, pitch);
    } else if (gen->parsed()) {
      record_out = gen_out;
      code = cmd_gen(gen_kind, gen_seed, gen_dim, gen_widths, gen_value, gen_out);
    } else if (scatter->parsed()) {
      record_out = scatter_out;
      code = cmd_scatter(run_path, scatter_out);
    } else if (serve->parsed()) {
      code = cmd_smtlib_serve();
    }
  } catch (const InputError& e) {
    write_json(record_out, error_record("input", e.what()));
    return 2;
  } catch (const CapacityError& e) {
    write_json(record_out, error_record("capacity", e.what()));
    return 2;
  } catch (const TimeoutError& e) {
    write_json(record_out, error_record("timeout", e.what()));
    return 3;
  } catch (const BackendError& e) {
    write_json(record_out, error_record("backend", e.what()));
    return 4;
  } catch (const std::exception& e) {
    write_json(record_out, error_record("internal", e.what()));
    return 1;
  }
  return code;
}
