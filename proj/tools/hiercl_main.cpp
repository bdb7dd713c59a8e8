// hiercl: synthetic dataset generation, patent-level splits, contrastive
// encoder training, taxonomy-aware retrieval evaluation, and plot-ready
// comparison/projection tables.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hiercl/hiercl.hpp"

namespace {

using nlohmann::json;

std::vector<std::string> split_csv(const std::string& text) {
  std::vector<std::string> parts;
  std::string token;
  std::istringstream stream(text);
  while (std::getline(stream, token, ',')) parts.push_back(token);
  return parts;
}

double parse_double(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(token, &used);
    hiercl::check(used == token.size(), "cli/bad_number", "");
    return v;
  } catch (...) {
    hiercl::fail("cli/bad_number",
                 std::string("cannot parse \"") + token + "\" as a number in " + what);
  }
}

long long parse_int(const std::string& token, const char* what) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(token, &used);
    hiercl::check(used == token.size(), "cli/bad_number", "");
    return v;
  } catch (...) {
    hiercl::fail("cli/bad_number",
                 std::string("cannot parse \"") + token + "\" as an integer in " + what);
  }
}

std::vector<std::size_t> parse_sizes(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (const std::string& token : split_csv(text)) {
    const long long v = parse_int(token, what);
    hiercl::check(v >= 0, "cli/bad_number",
                  std::string(what) + ": value must be non-negative");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

// All option values, shared across subcommands so one config file can drive
// any of them. Defaults come from the library types.
struct Options {
  std::string config_path;
  std::uint64_t seed = 1;
  bool quiet = false;

  hiercl::SyntheticSpec spec;

  std::string data_path = "dataset.jsonl";
  std::string split_path = "split.json";
  std::string checkpoint_path = "checkpoint.json";
  std::string ratios = "0.7225,0.1275,0.15";

  std::string loss = "hmcl";
  hiercl::TrainConfig train;
  std::string log_path;

  std::string ks = "1,5,10,20";
  std::string subset = "test";
  std::string seeds = "1,2,3,4,5";
  std::string subclasses;

  std::string out_gen = "dataset.jsonl";
  std::string out_split = "split.json";
  std::string out_train = "checkpoint.json";
  std::string out_eval = "metrics";
  std::string out_compare = "comparison.csv";
  std::string out_project = "projection.csv";
};

void info(const Options& opt, const std::string& line) {
  if (!opt.quiet) std::cout << line << "\n";
}

void warn(const std::string& line) { std::cerr << "warning: " << line << "\n"; }

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  hiercl::check(in.good(), "cli/config_missing", "cannot open config file: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    hiercl::fail("cli/config_malformed", std::string("config file: ") + e.what());
  }
  hiercl::check(j.is_object(), "cli/config_malformed",
                "config file must hold a single JSON object");
  return j;
}

template <typename T>
void cfg_get(const json& j, const char* key, T& var) {
  if (!j.contains(key)) return;
  try {
    var = j.at(key).get<T>();
  } catch (const json::exception&) {
    hiercl::fail("cli/bad_config", std::string("config key \"") + key + "\" has the wrong type");
  }
}

// List-valued keys may be JSON arrays or the same comma-separated strings the
// flags take.
void cfg_get_list(const json& j, const char* key, std::string& var) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (v.is_string()) {
    var = v.get<std::string>();
    return;
  }
  if (v.is_array()) {
    std::string joined;
    for (const json& item : v) {
      if (!joined.empty()) joined += ",";
      if (item.is_string())
        joined += item.get<std::string>();
      else
        joined += item.dump();
    }
    var = joined;
    return;
  }
  hiercl::fail("cli/bad_config",
               std::string("config key \"") + key + "\" must be a string or array");
}

void apply_config(const json& j, Options& opt) {
  cfg_get(j, "seed", opt.seed);
  cfg_get(j, "quiet", opt.quiet);

  cfg_get(j, "main_classes", opt.spec.main_classes);
  cfg_get(j, "subclasses_per_main", opt.spec.subclasses_per_main);
  cfg_get(j, "patents_per_subclass", opt.spec.patents_per_subclass);
  cfg_get(j, "images_per_patent", opt.spec.images_per_patent);
  cfg_get(j, "d_in", opt.spec.d_in);
  cfg_get(j, "spread_main", opt.spec.spread_main);
  cfg_get(j, "spread_sub", opt.spec.spread_sub);
  cfg_get(j, "spread_patent", opt.spec.spread_patent);
  cfg_get(j, "spread_image", opt.spec.spread_image);

  cfg_get(j, "data", opt.data_path);
  cfg_get(j, "split", opt.split_path);
  cfg_get(j, "checkpoint", opt.checkpoint_path);
  cfg_get_list(j, "ratios", opt.ratios);

  cfg_get(j, "loss", opt.loss);
  cfg_get(j, "use_text", opt.train.use_text);
  cfg_get(j, "lr", opt.train.lr);
  cfg_get(j, "weight_decay", opt.train.weight_decay);
  cfg_get(j, "tau", opt.train.loss.tau);
  cfg_get(j, "lambda", opt.train.loss.lambda);
  cfg_get(j, "symmetric", opt.train.loss.symmetric);
  cfg_get(j, "batch_size", opt.train.k);
  cfg_get(j, "max_epochs", opt.train.max_epochs);
  cfg_get(j, "patience", opt.train.patience);
  cfg_get(j, "s_p", opt.train.scores.s_p);
  cfg_get(j, "s_s", opt.train.scores.s_s);
  cfg_get(j, "s_m", opt.train.scores.s_m);
  cfg_get(j, "d", opt.train.d);
  cfg_get(j, "hidden", opt.train.hidden);
  cfg_get(j, "noise_sigma", opt.train.noise_sigma);
  cfg_get(j, "noise_p", opt.train.noise_p);
  cfg_get(j, "log", opt.log_path);

  cfg_get_list(j, "ks", opt.ks);
  cfg_get(j, "subset", opt.subset);
  cfg_get_list(j, "seeds", opt.seeds);
  cfg_get_list(j, "subclasses", opt.subclasses);

  cfg_get(j, "out_gen", opt.out_gen);
  cfg_get(j, "out_split", opt.out_split);
  cfg_get(j, "out_train", opt.out_train);
  cfg_get(j, "out_eval", opt.out_eval);
  cfg_get(j, "out_compare", opt.out_compare);
  cfg_get(j, "out_project", opt.out_project);
}

std::size_t worker_threads() {
  const char* env = std::getenv("HIERCL_THREADS");
  if (env == nullptr || *env == '\0') {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
  }
  const long long v = parse_int(env, "HIERCL_THREADS");
  hiercl::check(v >= 1, "cli/bad_threads", "HIERCL_THREADS must be a positive integer");
  return static_cast<std::size_t>(v);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  hiercl::check(out.good(), "cli/unwritable", "cannot write file: " + path);
  out << content;
  hiercl::check(out.good(), "cli/unwritable", "write failed: " + path);
}

hiercl::TrainConfig make_train_config(const Options& opt) {
  hiercl::TrainConfig cfg = opt.train;
  cfg.loss_mode = hiercl::parse_loss_mode(opt.loss);
  cfg.seed = opt.seed;
  if (cfg.use_text && cfg.loss_mode == hiercl::LossMode::Contrastive)
    warn("--use-text has no effect with --loss cl; the text term is part of hmcl only");
  hiercl::validate(cfg);
  return cfg;
}

int cmd_gen(Options& opt) {
  hiercl::SyntheticSpec spec = opt.spec;
  spec.seed = opt.seed;
  const hiercl::Dataset ds = hiercl::generate_synthetic(spec);
  hiercl::save_jsonl(ds, opt.out_gen);
  const std::size_t patents = hiercl::group_by_patent(ds).size();
  std::set<int> subclasses;
  std::set<int> mains;
  for (const hiercl::ImageRecord& rec : ds.records) {
    subclasses.insert(rec.label.subclass);
    mains.insert(rec.label.main_class);
  }
  info(opt, "wrote " + std::to_string(ds.records.size()) + " records (" +
                std::to_string(patents) + " patents, " +
                std::to_string(subclasses.size()) + " subclasses, " +
                std::to_string(mains.size()) + " main classes) to " + opt.out_gen);
  return 0;
}

int cmd_split(Options& opt) {
  const hiercl::Dataset ds = hiercl::load_jsonl(opt.data_path);
  const std::vector<std::string> tokens = split_csv(opt.ratios);
  hiercl::check(tokens.size() == 3, "cli/bad_ratios",
                "--ratios expects 3 comma-separated values, got " +
                    std::to_string(tokens.size()));
  std::array<double, 3> ratios{};
  for (std::size_t i = 0; i < 3; ++i) ratios[i] = parse_double(tokens[i], "--ratios");
  std::vector<std::string> warnings;
  const hiercl::SplitSpec split = hiercl::split_by_patent(ds, ratios, opt.seed, &warnings);
  hiercl::save_split(split, opt.out_split);
  for (const std::string& w : warnings) warn(w);
  info(opt, "split " + std::to_string(split.train.size()) + "/" +
                std::to_string(split.val.size()) + "/" + std::to_string(split.test.size()) +
                " train/val/test patents to " + opt.out_split);
  return 0;
}

int cmd_train(Options& opt) {
  const hiercl::Dataset ds = hiercl::load_jsonl(opt.data_path);
  const hiercl::SplitSpec split = hiercl::load_split(opt.split_path);
  const hiercl::TrainConfig cfg = make_train_config(opt);

  const hiercl::TrainResult result = hiercl::train(ds, split, cfg);
  for (const std::string& w : result.warnings) warn(w);

  hiercl::save_checkpoint(result.params, cfg, opt.out_train);
  const std::string log_path =
      opt.log_path.empty() ? opt.out_train + ".log.jsonl" : opt.log_path;
  std::string log_text;
  for (const hiercl::EpochLog& entry : result.log) {
    json line;
    line["epoch"] = entry.epoch;
    line["loss"] = entry.mean_loss;
    line["val_map"] = entry.val_map;  // NaN serializes as null
    log_text += line.dump() + "\n";
  }
  json final_line;
  final_line["best_epoch"] = result.best_epoch;
  final_line["best_val_map"] = result.best_val_map;
  log_text += final_line.dump() + "\n";
  write_text_file(log_path, log_text);

  std::string summary = "trained " + std::to_string(result.log.size()) + " epoch(s); best epoch " +
                        std::to_string(result.best_epoch);
  if (std::isfinite(result.best_val_map))
    summary += " (val patent_id mAP " + hiercl::format_double(result.best_val_map) + ")";
  info(opt, summary);
  info(opt, "checkpoint -> " + opt.out_train + ", log -> " + log_path);
  return 0;
}

hiercl::EvalSplit make_eval_split(const hiercl::Dataset& ds, const hiercl::SplitSpec& split,
                                  const std::string& subset) {
  const std::vector<std::string>& patents = subset == "val" ? split.val : split.test;
  hiercl::check(!patents.empty(), "cli/empty_subset",
                "the " + subset + " split holds no patents");
  hiercl::Rng rng(hiercl::derive_seed(split.seed, "eval-" + subset));
  return hiercl::build_eval_split(ds, patents, 2, rng);
}

int cmd_eval(Options& opt) {
  const hiercl::Dataset ds = hiercl::load_jsonl(opt.data_path);
  const hiercl::SplitSpec split = hiercl::load_split(opt.split_path);
  hiercl::validate_split(ds, split);
  auto [params, ckpt_cfg] = hiercl::load_checkpoint(opt.checkpoint_path);
  hiercl::check(params.d_in() == ds.d_in, "encoder/dim_mismatch",
                "checkpoint expects d_in=" + std::to_string(params.d_in()) +
                    " but the dataset has d_in=" + std::to_string(ds.d_in));

  const hiercl::EvalSplit eval_split = make_eval_split(ds, split, opt.subset);
  if (!eval_split.skipped_patents.empty())
    info(opt, "skipped " + std::to_string(eval_split.skipped_patents.size()) +
                  " patent(s) as query sources (too few images)");

  const hiercl::MetricsReport report =
      hiercl::evaluate(params, eval_split, parse_sizes(opt.ks, "--ks"));
  write_text_file(opt.out_eval + ".json", hiercl::report_to_json(report).dump(2) + "\n");
  write_text_file(opt.out_eval + ".csv", hiercl::report_to_csv(report));

  for (const hiercl::HierLevel level : hiercl::kAllLevels) {
    const hiercl::LevelMetrics& m = report.at(level);
    info(opt, std::string(hiercl::level_name(level)) + ": mAP " +
                  hiercl::format_double(m.map) + ", nDCG " + hiercl::format_double(m.ndcg) +
                  " over " + std::to_string(m.evaluated) + " queries");
  }
  info(opt, "report -> " + opt.out_eval + ".json, " + opt.out_eval + ".csv");
  return 0;
}

int cmd_compare(Options& opt) {
  const hiercl::Dataset ds = hiercl::load_jsonl(opt.data_path);
  const hiercl::SplitSpec split = hiercl::load_split(opt.split_path);
  hiercl::TrainConfig cfg_base = opt.train;
  cfg_base.seed = opt.seed;
  hiercl::validate(cfg_base);

  std::vector<std::uint64_t> seeds;
  for (const std::string& token : split_csv(opt.seeds))
    seeds.push_back(static_cast<std::uint64_t>(parse_int(token, "--seeds")));

  const std::vector<hiercl::ComparisonRow> rows = hiercl::run_comparison(
      ds, split, cfg_base, seeds, worker_threads(), parse_sizes(opt.ks, "--ks"));
  write_text_file(opt.out_compare, hiercl::comparison_to_csv(rows));
  info(opt, "wrote " + std::to_string(rows.size()) + " comparison rows (" +
                std::to_string(seeds.size()) + " seeds) to " + opt.out_compare);
  return 0;
}

int cmd_project(Options& opt) {
  const hiercl::Dataset ds = hiercl::load_jsonl(opt.data_path);
  auto [params, ckpt_cfg] = hiercl::load_checkpoint(opt.checkpoint_path);
  hiercl::check(params.d_in() == ds.d_in, "encoder/dim_mismatch",
                "checkpoint expects d_in=" + std::to_string(params.d_in()) +
                    " but the dataset has d_in=" + std::to_string(ds.d_in));
  std::vector<int> codes;
  for (const std::string& token : split_csv(opt.subclasses))
    codes.push_back(static_cast<int>(parse_int(token, "--subclasses")));
  const std::vector<hiercl::ProjectionRow> rows =
      hiercl::project_subclasses(params, ds, codes);
  write_text_file(opt.out_project, hiercl::projection_to_csv(rows));
  info(opt, "wrote " + std::to_string(rows.size()) + " projected points to " +
                opt.out_project);
  return 0;
}

int run(int argc, char** argv) {
  Options opt;

  // The config file must be applied before CLI11 parses so that flags given
  // on the command line win over config values.
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config" && i + 1 < argc) opt.config_path = argv[i + 1];
    if (arg.rfind("--config=", 0) == 0) opt.config_path = arg.substr(9);
  }
  if (!opt.config_path.empty()) apply_config(load_config_file(opt.config_path), opt);

  CLI::App app{"hierarchical multi-positive contrastive learning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  app.add_option("--config", opt.config_path, "JSON config file; flags override its values");
  app.add_option("--seed", opt.seed, "seed for the command's randomness");
  app.add_flag("--quiet", opt.quiet, "suppress informational output");

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--main-classes", opt.spec.main_classes, "number of main classes");
  gen->add_option("--subclasses-per-main", opt.spec.subclasses_per_main,
                  "subclasses per main class");
  gen->add_option("--patents-per-subclass", opt.spec.patents_per_subclass,
                  "patents per subclass");
  gen->add_option("--images-per-patent", opt.spec.images_per_patent, "images per patent");
  gen->add_option("--d-in", opt.spec.d_in, "feature dimension");
  gen->add_option("--spread-main", opt.spec.spread_main, "main-class mean spread");
  gen->add_option("--spread-sub", opt.spec.spread_sub, "subclass offset spread");
  gen->add_option("--spread-patent", opt.spec.spread_patent, "patent offset spread");
  gen->add_option("--spread-image", opt.spec.spread_image, "per-image noise spread");
  gen->add_option("--out", opt.out_gen, "output dataset path (JSONL)");

  CLI::App* split = app.add_subcommand("split", "split a dataset by patent");
  split->add_option("--data", opt.data_path, "dataset path (JSONL)");
  split->add_option("--ratios", opt.ratios, "train,val,test ratios summing to 1");
  split->add_option("--out", opt.out_split, "output split path (JSON)");

  CLI::App* train = app.add_subcommand("train", "train the encoder");
  train->add_option("--data", opt.data_path, "dataset path (JSONL)");
  train->add_option("--split", opt.split_path, "split path (JSON)");
  train->add_option("--loss", opt.loss, "loss mode")->check(CLI::IsMember({"cl", "hmcl"}));
  train->add_flag("--use-text", opt.train.use_text, "add the language supervision term");
  train->add_option("--lr", opt.train.lr, "learning rate");
  train->add_option("--weight-decay", opt.train.weight_decay, "decoupled weight decay");
  train->add_option("--tau", opt.train.loss.tau, "softmax temperature");
  train->add_option("--lambda", opt.train.loss.lambda, "language term weight");
  train->add_flag("--symmetric", opt.train.loss.symmetric,
                  "average the reversed image-image direction");
  train->add_option("--batch-size", opt.train.k, "patents per batch");
  train->add_option("--max-epochs", opt.train.max_epochs, "maximum training epochs");
  train->add_option("--patience", opt.train.patience, "early-stopping patience");
  train->add_option("--s-p", opt.train.scores.s_p, "same-patent relevance score");
  train->add_option("--s-s", opt.train.scores.s_s, "same-subclass relevance score");
  train->add_option("--s-m", opt.train.scores.s_m, "same-main-class relevance score");
  train->add_option("--d", opt.train.d, "embedding dimension");
  train->add_option("--hidden", opt.train.hidden, "hidden width (0 = single layer)");
  train->add_option("--noise-sigma", opt.train.noise_sigma,
                    "feature noise sigma (0 disables)");
  train->add_option("--noise-p", opt.train.noise_p, "feature noise probability");
  train->add_option("--out", opt.out_train, "output checkpoint path (JSON)");
  train->add_option("--log", opt.log_path, "training log path (default <out>.log.jsonl)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--data", opt.data_path, "dataset path (JSONL)");
  eval->add_option("--split", opt.split_path, "split path (JSON)");
  eval->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path (JSON)");
  eval->add_option("--ks", opt.ks, "comma-separated K values");
  eval->add_option("--subset", opt.subset, "patents to evaluate")
      ->check(CLI::IsMember({"test", "val"}));
  eval->add_option("--out", opt.out_eval, "output prefix; writes <out>.json and <out>.csv");

  CLI::App* compare = app.add_subcommand("compare", "Baseline/CL/HMCL comparison table");
  compare->add_option("--data", opt.data_path, "dataset path (JSONL)");
  compare->add_option("--split", opt.split_path, "split path (JSON)");
  compare->add_option("--seeds", opt.seeds, "comma-separated training seeds");
  compare->add_option("--ks", opt.ks, "comma-separated K values");
  compare->add_option("--lr", opt.train.lr, "learning rate");
  compare->add_option("--weight-decay", opt.train.weight_decay, "decoupled weight decay");
  compare->add_option("--tau", opt.train.loss.tau, "softmax temperature");
  compare->add_option("--lambda", opt.train.loss.lambda, "language term weight");
  compare->add_flag("--use-text", opt.train.use_text, "add the language term to hmcl");
  compare->add_option("--batch-size", opt.train.k, "patents per batch");
  compare->add_option("--max-epochs", opt.train.max_epochs, "maximum training epochs");
  compare->add_option("--patience", opt.train.patience, "early-stopping patience");
  compare->add_option("--s-p", opt.train.scores.s_p, "same-patent relevance score");
  compare->add_option("--s-s", opt.train.scores.s_s, "same-subclass relevance score");
  compare->add_option("--s-m", opt.train.scores.s_m, "same-main-class relevance score");
  compare->add_option("--d", opt.train.d, "embedding dimension");
  compare->add_option("--hidden", opt.train.hidden, "hidden width (0 = single layer)");
  compare->add_option("--noise-sigma", opt.train.noise_sigma,
                      "feature noise sigma (0 disables)");
  compare->add_option("--noise-p", opt.train.noise_p, "feature noise probability");
  compare->add_option("--out", opt.out_compare, "output CSV path");

  CLI::App* project = app.add_subcommand("project", "2-component PCA of subclass embeddings");
  project->add_option("--data", opt.data_path, "dataset path (JSONL)");
  project->add_option("--checkpoint", opt.checkpoint_path, "checkpoint path (JSON)");
  project->add_option("--subclasses", opt.subclasses, "comma-separated subclass codes")
      ->required();
  project->add_option("--out", opt.out_project, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error[cli/usage]: " << e.what() << "\n";
    return 1;
  }

  if (gen->parsed()) return cmd_gen(opt);
  if (split->parsed()) return cmd_split(opt);
  if (train->parsed()) return cmd_train(opt);
  if (eval->parsed()) return cmd_eval(opt);
  if (compare->parsed()) return cmd_compare(opt);
  if (project->parsed()) return cmd_project(opt);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const hiercl::Error& e) {
    std::cerr << "error[" << e.code() << "]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
}
