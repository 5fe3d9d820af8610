#include "medground/cli.h"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>

#include <CLI11.hpp>

#include "medground/aligner.h"
#include "medground/evaluate.h"
#include "medground/pipeline.h"

namespace medground::cli {

namespace {

struct ForgeArgs {
  forge::ForgeOptions options;
  std::vector<std::string> perspectives = {"p1", "p2", "p3", "p4"};
  std::vector<double> ratios;
  std::vector<double> mix_weights;
  std::string provider_url;
  std::string provider_stub;
  int provider_timeout_ms = 60000;
  bool lenient = false;
  std::string examples, exclusions, vqa;
};

struct EvalArgs {
  std::string predictions, gold, out;
  std::size_t shards = 1;
  std::size_t workers = 1;
  metrics::MetricConfig config;
};

struct ParseArgs {
  std::string input;
  bool lenient = false;
  bool jsonl = false;
};

struct GradArgs {
  std::uint64_t seed = 0;
  std::size_t cases = 20;
  double eps = 1e-5;
  std::optional<double> tolerance;
  std::string inject_sign_flip;
};

struct StatsArgs {
  std::string dataset;
};

void PrintError(std::ostream& err, std::string_view kind, std::string_view message,
                Json extra = Json::object()) {
  Json j;
  j["error"] = kind;
  j["message"] = message;
  for (auto& [k, v] : extra.items()) j[k] = v;
  err << j.dump() << "\n";
}

int ExitCodeFor(ErrorKind kind) {
  return kind == ErrorKind::kProviderError ? kExitProvider : kExitInput;
}

int RunForge(ForgeArgs& a, std::ostream& out) {
  forge::ForgeOptions& o = a.options;
  o.perspectives.clear();
  for (const auto& p : a.perspectives) o.perspectives.push_back(forge::ParsePerspective(p));
  std::sort(o.perspectives.begin(), o.perspectives.end());
  o.perspectives.erase(std::unique(o.perspectives.begin(), o.perspectives.end()),
                       o.perspectives.end());
  if (!a.ratios.empty()) {
    if (a.ratios.size() != 3) {
      throw Error(ErrorKind::kBadRatios, "--ratios takes train,val,test");
    }
    o.ratios = {a.ratios[0], a.ratios[1], a.ratios[2]};
    forge::ComputeSplitSizes(1, o.ratios);  // validates
  }
  if (!a.mix_weights.empty()) {
    if (a.mix_weights.size() != 5) {
      throw Error(ErrorKind::kInvalidArgument, "--mix-weights takes five values");
    }
    std::copy(a.mix_weights.begin(), a.mix_weights.end(), o.mix_weights.begin());
  }
  o.strictness = a.lenient ? forge::Strictness::kLenient : forge::Strictness::kStrict;
  if (!a.examples.empty()) o.examples = a.examples;
  if (!a.exclusions.empty()) o.exclusions = a.exclusions;
  if (!a.vqa.empty()) o.vqa = a.vqa;

  std::unique_ptr<forge::CompletionProvider> provider;
  if (!a.provider_stub.empty()) {
    provider = std::make_unique<forge::StubProvider>(a.provider_stub);
  } else if (!a.provider_url.empty()) {
    const char* key = std::getenv("PROVIDER_API_KEY");
    provider = std::make_unique<forge::HttpProvider>(
        a.provider_url, key ? key : "", std::chrono::milliseconds(a.provider_timeout_ms));
  }
  std::error_code ec;
  std::filesystem::create_directories(o.out_dir, ec);
  if (ec) throw Error(ErrorKind::kIoError, "cannot create " + o.out_dir.string());

  const forge::ForgeResult r = forge::RunForge(o, provider.get());
  Json summary;
  Json counts = Json::object();
  for (const auto& [p, samples] : r.samples) {
    counts[std::string(forge::PerspectiveName(p))] = samples.size();
  }
  summary["samples"] = std::move(counts);
  summary["skipped"] = r.skipped.size();
  summary["provider_calls"] = r.provider_calls;
  summary["provider_failures"] = r.provider_failures;
  summary["out"] = o.out_dir.string();
  out << summary.dump() << "\n";
  return r.provider_failures > 0 ? kExitProvider : kExitOk;
}

int RunEval(const EvalArgs& a, std::ostream& out) {
  const auto predictions = ReadJsonl(a.predictions);
  const auto gold = ReadJsonl(a.gold);
  const eval::EvalSet set = eval::AlignById(predictions, gold);
  const eval::EvalResult result = eval::Evaluate(set, a.config, a.shards, a.workers);
  const std::string text = eval::EvalResultToJson(result).dump(2) + "\n";
  if (!a.out.empty()) WriteFileAtomic(a.out, text);
  out << text;
  return kExitOk;
}

int RunParse(const ParseArgs& a, std::ostream& out) {
  std::ifstream file;
  std::istream* in = &std::cin;
  if (a.input != "-") {
    file.open(a.input, std::ios::binary);
    if (!file) throw Error(ErrorKind::kIoError, "cannot open " + a.input);
    in = &file;
  }
  const bool jsonl = a.jsonl || a.input.ends_with(".jsonl");
  const auto mode = a.lenient ? grounded::ParseMode::kLenient : grounded::ParseMode::kStrict;
  bool all_ok = true;
  std::string line;
  for (std::size_t n = 1; std::getline(*in, line); ++n) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string text = line;
    if (jsonl) {
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      Json row;
      try {
        row = Json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::kParseError,
                    "line " + std::to_string(n) + ": " + e.what());
      }
      if (!row.contains("response") || !row["response"].is_string()) {
        throw Error(ErrorKind::kParseError,
                    "line " + std::to_string(n) + ": no string \"response\"");
      }
      text = row["response"].get<std::string>();
    }
    const grounded::ParseResult r = grounded::ParseGrounded(text, mode);
    Json j;
    j["line"] = n;
    j["ok"] = r.ok();
    if (r.ok()) {
      Json entities = Json::array();
      for (const auto& [phrase, slot] : grounded::ExtractEntities(*r.response)) {
        entities.push_back(phrase);
      }
      j["entities"] = std::move(entities);
    } else {
      all_ok = false;
    }
    Json diags = Json::array();
    for (const auto& d : r.diagnostics) {
      Json dj;
      dj["kind"] = grounded::DiagnosticKindName(d.kind);
      dj["offset"] = d.byte_offset;
      diags.push_back(std::move(dj));
    }
    j["diagnostics"] = std::move(diags);
    out << j.dump() << "\n";
  }
  return all_ok ? kExitOk : kExitValidation;
}

int RunGradcheck(const GradArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.eps > 0.0)) throw Error(ErrorKind::kInvalidArgument, "--eps must be positive");
  const double tolerance = a.tolerance.value_or(1e-4 * a.eps / 1e-5);
  std::function<void(aligner::Params&)> tamper;
  if (!a.inject_sign_flip.empty()) {
    bool found = false;
    aligner::Params names;
    names.ForEach([&](std::string_view name, aligner::Matrix&) {
      found |= name == a.inject_sign_flip;
    });
    if (!found) {
      throw Error(ErrorKind::kInvalidArgument,
                  "unknown parameter '" + a.inject_sign_flip + "'");
    }
    tamper = [&](aligner::Params& g) {
      g.ForEach([&](std::string_view name, aligner::Matrix& m) {
        if (name == a.inject_sign_flip) {
          for (double& v : m.values()) v = -v;
        }
      });
    };
  }

  Json report;
  report["eps"] = a.eps;
  report["tolerance"] = tolerance;
  Json cases = Json::array();
  double worst = 0.0;
  std::vector<std::string> failing;
  for (const auto& c : aligner::SeededCases(a.cases, a.seed)) {
    const aligner::GradCheckReport r = aligner::RunGradCheck(c, a.eps, tamper);
    Json cj;
    cj["seed"] = c.seed;
    cj["d"] = c.config.d;
    cj["n_q"] = c.config.n_q;
    cj["batch"] = c.batch.size();
    cj["max_rel_error"] = r.max_rel_error;
    cj["worst"] = r.worst;
    cases.push_back(std::move(cj));
    worst = std::max(worst, r.max_rel_error);
    for (const auto& pe : r.params) {
      if (pe.max_rel_error >= tolerance &&
          std::find(failing.begin(), failing.end(), pe.name) == failing.end()) {
        failing.push_back(pe.name);
      }
    }
  }
  report["cases"] = std::move(cases);
  report["max_rel_error"] = worst;
  report["failing_params"] = failing;
  report["pass"] = failing.empty();
  out << report.dump(2) << "\n";
  if (failing.empty()) return kExitOk;
  Json extra;
  extra["params"] = failing;
  PrintError(err, "GradCheckFailed", "analytic gradients disagree with central differences",
             std::move(extra));
  return kExitValidation;
}

int RunStats(const StatsArgs& a, std::ostream& out) {
  if (!std::filesystem::is_directory(a.dataset)) {
    throw Error(ErrorKind::kIoError, a.dataset + " is not a directory");
  }
  out << forge::ScanDataset(a.dataset).ToJson().dump(2) << "\n";
  return kExitOk;
}

}  // namespace

int Run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Grounded medical segmentation data and evaluation toolkit", "medground"};
  app.set_config("--config", "", "INI/TOML file with option values; flags override it");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Expand all help");

  ForgeArgs forge_args;
  std::string manifest, knowledge, out_dir;
  auto* forge_cmd = app.add_subcommand("forge", "Build the four-perspective dataset");
  forge_cmd->add_option("--manifest", manifest, "Image manifest (JSONL)")->required();
  forge_cmd->add_option("--knowledge", knowledge, "Knowledge base (JSON array)");
  forge_cmd->add_option("--out", out_dir, "Output directory")->required();
  forge_cmd->add_option("--seed", forge_args.options.seed, "Run seed")->default_val(0);
  forge_cmd->add_option("--perspectives", forge_args.perspectives,
                        "Comma-separated subset of p1,p2,p3,p4")
      ->delimiter(',');
  forge_cmd->add_option("--ratios", forge_args.ratios, "train,val,test split ratios")
      ->delimiter(',');
  forge_cmd->add_option("--mix-weights", forge_args.mix_weights,
                        "P1,P2,P3,P4,VQA mixing weights")
      ->delimiter(',');
  forge_cmd->add_option("--mix-count", forge_args.options.mix_count,
                        "Draws written to mix.jsonl (0 disables)");
  forge_cmd->add_option("--vqa", forge_args.vqa, "JSONL of VQA records for the fifth mix source");
  forge_cmd->add_option("--examples", forge_args.examples,
                        "In-context examples for P3 (JSON array of strings)");
  forge_cmd->add_option("--exclude", forge_args.exclusions,
                        "Sample ids to drop from val/test, one per line");
  auto* url = forge_cmd->add_option("--provider-url", forge_args.provider_url,
                                    "Completion endpoint (API key from PROVIDER_API_KEY)");
  auto* stub = forge_cmd->add_option("--provider-stub", forge_args.provider_stub,
                                     "Directory of canned completions");
  url->excludes(stub);
  forge_cmd->add_option("--provider-timeout-ms", forge_args.provider_timeout_ms,
                        "HTTP provider timeout");
  forge_cmd->add_option("--retries", forge_args.options.retry.max_attempts,
                        "Provider attempts per sample")
      ->check(CLI::PositiveNumber);
  forge_cmd->add_option("--workers", forge_args.options.workers, "Worker threads")
      ->check(CLI::PositiveNumber);
  forge_cmd->add_option("--max-in-flight", forge_args.options.max_in_flight,
                        "Concurrent provider calls")
      ->check(CLI::PositiveNumber);
  auto* strict = forge_cmd->add_flag("--strict", "Fail on labels without knowledge (default)");
  auto* lenient = forge_cmd->add_flag("--lenient", forge_args.lenient,
                                      "Use a placeholder for labels without knowledge");
  strict->excludes(lenient);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score predictions against gold samples");
  eval_cmd->add_option("--predictions", eval_args.predictions, "Predictions (JSONL)")
      ->required();
  eval_cmd->add_option("--gold", eval_args.gold, "Gold samples (JSONL)")->required();
  eval_cmd->add_option("--out", eval_args.out, "Also write the report here");
  eval_cmd->add_option("--shards", eval_args.shards, "Evaluate in this many shards and merge")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--workers", eval_args.workers, "Shards evaluated concurrently")
      ->check(CLI::PositiveNumber);
  eval_cmd->add_option("--f1-iou", eval_args.config.f1_iou_threshold,
                       "IoU a grounding F1 match must exceed");
  eval_cmd->add_option("--ap-iou", eval_args.config.ap_iou_threshold,
                       "IoU an AP match must reach");

  ParseArgs parse_args;
  auto* parse_cmd = app.add_subcommand("parse", "Validate grounded responses line by line");
  parse_cmd->add_option("input", parse_args.input, "Text or JSONL file, - for stdin")
      ->required();
  parse_cmd->add_flag("--lenient", parse_args.lenient, "Accept recoverable problems");
  parse_cmd->add_flag("--jsonl", parse_args.jsonl,
                      "Read the \"response\" field of JSON lines (implied by .jsonl)");

  GradArgs grad_args;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Check aligner gradients numerically");
  grad_cmd->add_option("--seed", grad_args.seed, "Base seed")->default_val(0);
  grad_cmd->add_option("--cases", grad_args.cases, "Seeded configurations")
      ->default_val(20)
      ->check(CLI::PositiveNumber);
  grad_cmd->add_option("--eps", grad_args.eps, "Finite-difference step")->default_val(1e-5);
  grad_cmd->add_option("--tolerance", grad_args.tolerance,
                       "Maximum relative error (default 1e-4 * eps / 1e-5)");
  grad_cmd->add_option("--inject-sign-flip", grad_args.inject_sign_flip)->group("");

  StatsArgs stats_args;
  auto* stats_cmd = app.add_subcommand("stats", "Count samples per perspective, modality, split");
  stats_cmd->add_option("dataset", stats_args.dataset, "Forge output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    PrintError(err, "UsageError", e.what());
    return kExitInput;
  }

  try {
    if (forge_cmd->parsed()) {
      forge_args.options.manifest = manifest;
      forge_args.options.knowledge = knowledge;
      forge_args.options.out_dir = out_dir;
      return RunForge(forge_args, out);
    }
    if (eval_cmd->parsed()) return RunEval(eval_args, out);
    if (parse_cmd->parsed()) return RunParse(parse_args, out);
    if (grad_cmd->parsed()) return RunGradcheck(grad_args, out, err);
    if (stats_cmd->parsed()) return RunStats(stats_args, out);
  } catch (const eval::IdMismatchError& e) {
    Json extra;
    extra["missing_predictions"] = e.missing_predictions();
    extra["missing_gold"] = e.missing_gold();
    PrintError(err, ErrorKindName(e.kind()), e.what(), std::move(extra));
    return kExitInput;
  } catch (const Error& e) {
    PrintError(err, ErrorKindName(e.kind()), e.what());
    return ExitCodeFor(e.kind());
  } catch (const std::exception& e) {
    PrintError(err, "InternalError", e.what());
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace medground::cli
