// Command-line front end: data generation, training, enrollment,
// verification, evaluation, and the ablation matrix.
//
// Exit codes: 0 success (and "accept" for verify), 1 "reject" for verify,
// 2 any error (bad flags, missing files, runtime failures).

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "aggnet/aggnet.hpp"

namespace fs = std::filesystem;
using namespace aggnet;

namespace {

struct TrainFlags {
  TrainConfig cfg;
  std::string loss = "wmw";
  std::string pooling = "netvlad";
  std::string hidden = "64";
  bool hashing = true;
};

// Registers the TrainConfig surface on a subcommand; flag values override
// config-file values, which override the defaults baked into TrainConfig.
void add_train_options(CLI::App* app, TrainFlags& f) {
  app->add_option("--lr", f.cfg.lr, "learning rate")->capture_default_str();
  app->add_option("--momentum", f.cfg.momentum, "SGD momentum")->capture_default_str();
  app->add_option("--weight-decay", f.cfg.weight_decay, "L2 weight decay on weights")
      ->capture_default_str();
  app->add_option("--batch-size", f.cfg.batch_size, "groups per batch (B)")
      ->capture_default_str();
  app->add_option("--group-size", f.cfg.group_size, "members per group (n)")
      ->capture_default_str();
  app->add_option("--max-epochs", f.cfg.max_epochs, "epoch budget")->capture_default_str();
  app->add_option("--patience", f.cfg.plateau_patience, "plateau epochs before lr cut")
      ->capture_default_str();
  app->add_option("--lr-factor", f.cfg.lr_factor, "lr multiplier on plateau")
      ->capture_default_str();
  app->add_option("--val-batches", f.cfg.val_batches, "validation batches per epoch")
      ->capture_default_str();
  app->add_option("--loss", f.loss, "training loss: wmw | wce")->capture_default_str();
  app->add_option("--pooling", f.pooling, "aggregation: netvlad | gem | sum")
      ->capture_default_str();
  app->add_option("--hashing", f.hashing, "binarization layer on/off")->capture_default_str();
  app->add_option("--wmw-margin", f.cfg.wmw.margin, "WMW margin gamma")->capture_default_str();
  app->add_option("--wmw-exponent", f.cfg.wmw.exponent, "WMW hinge exponent p")
      ->capture_default_str();
  app->add_option("--d", f.cfg.model.d, "embedding/code dimension")->capture_default_str();
  app->add_option("--hidden", f.hidden, "comma-separated hidden widths")->capture_default_str();
  app->add_option("--clusters", f.cfg.model.clusters, "NetVLAD cluster count K")
      ->capture_default_str();
  app->add_option("--hash-weight", f.cfg.model.hash.penalty_weight,
                  "quantization penalty weight")
      ->capture_default_str();
  app->add_option("--hash-exponent", f.cfg.model.hash.penalty_exponent,
                  "quantization penalty exponent")
      ->capture_default_str();
}

TrainConfig resolve_train_config(const TrainFlags& f, std::size_t d_in) {
  TrainConfig cfg = f.cfg;
  cfg.loss = loss_parse(f.loss);
  cfg.model.pooling = pooling_parse(f.pooling);
  cfg.model.hash.enabled = f.hashing;
  cfg.model.hidden = parse_widths(f.hidden);
  cfg.model.d_in = d_in;
  return cfg;
}

// Group manifest: one group per line, "gid=identity,identity,...".
std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> read_group_manifest(
    const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open group manifest: " + path.string());
  std::vector<std::pair<std::uint32_t, std::vector<std::uint32_t>>> groups;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("group manifest line has no '=': " + line, line_start);
    }
    std::pair<std::uint32_t, std::vector<std::uint32_t>> g;
    try {
      g.first = static_cast<std::uint32_t>(std::stoul(line.substr(0, eq)));
      std::stringstream ss(line.substr(eq + 1));
      std::string item;
      while (std::getline(ss, item, ',')) {
        g.second.push_back(static_cast<std::uint32_t>(std::stoul(item)));
      }
    } catch (const std::exception&) {
      throw FormatError("group manifest line is not numeric: " + line, line_start);
    }
    if (g.second.empty()) throw FormatError("group with no members: " + line, line_start);
    groups.push_back(std::move(g));
  }
  return groups;
}

const IdentityRecord& find_identity(const DatasetSplit& data, std::uint32_t id) {
  for (const auto* split : {&data.train, &data.validation, &data.test}) {
    for (const auto& rec : *split) {
      if (rec.identity_id == id) return rec;
    }
  }
  throw NotFoundError("identity " + std::to_string(id) + " not in dataset");
}

int run(int argc, char** argv) {
  CLI::App app{"Group-membership verification via aggregated binary codes"};
  app.require_subcommand(1);
  app.fallthrough();  // let --seed appear after the subcommand name

  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "master RNG seed")->capture_default_str();

  // ---- gen ----
  auto* gen = app.add_subcommand("gen", "generate a synthetic identity dataset");
  gen->set_config("--config", "", "flat key=value config file");
  std::size_t g_ids = 640, g_samples = 4, g_din = 64;
  double g_sep = 3.0, g_noise = 0.3;
  std::string g_out = "dataset.manifest";
  gen->add_option("--identities", g_ids, "identity count")->capture_default_str();
  gen->add_option("--samples-per-identity", g_samples, "samples per identity")
      ->capture_default_str();
  gen->add_option("--d-in", g_din, "raw descriptor dimension")->capture_default_str();
  gen->add_option("--class-sep", g_sep, "latent scale (separation)")->capture_default_str();
  gen->add_option("--noise-sigma", g_noise, "per-sample noise sigma")->capture_default_str();
  gen->add_option("--out", g_out, "output manifest path")->capture_default_str();

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  tr->set_config("--config", "", "flat key=value config file");
  TrainFlags tf;
  std::string t_data, t_out = "model.checkpoint", t_report;
  tr->add_option("--data", t_data, "dataset manifest")->required();
  tr->add_option("--out", t_out, "checkpoint output path")->capture_default_str();
  tr->add_option("--report", t_report, "per-epoch records file (default: <out>.report)");
  add_train_options(tr, tf);

  // ---- enroll ----
  auto* en = app.add_subcommand("enroll", "enroll groups into a code store");
  en->set_config("--config", "", "flat key=value config file");
  std::string e_model, e_data, e_groups, e_out = "groups.store";
  bool e_retain = false;
  std::size_t e_sample = 0;
  en->add_option("--model", e_model, "model checkpoint")->required();
  en->add_option("--data", e_data, "dataset manifest")->required();
  en->add_option("--groups", e_groups, "group manifest: lines 'gid=id1,id2,...'")->required();
  en->add_option("--out", e_out, "store output path")->capture_default_str();
  en->add_option("--sample", e_sample, "sample index used for enrollment")
      ->capture_default_str();
  en->add_flag("--retain", e_retain, "retain member samples (enables membership updates)");

  // ---- verify ----
  auto* ve = app.add_subcommand("verify", "verify a query against a claimed group");
  ve->set_config("--config", "", "flat key=value config file");
  std::string v_model, v_data, v_store;
  std::uint32_t v_group = 0, v_identity = 0;
  std::size_t v_sample = 0;
  double v_threshold = 0.5;
  ve->add_option("--model", v_model, "model checkpoint")->required();
  ve->add_option("--data", v_data, "dataset manifest")->required();
  ve->add_option("--store", v_store, "group store")->required();
  ve->add_option("--group", v_group, "claimed group id")->required();
  ve->add_option("--identity", v_identity, "query identity id")->required();
  ve->add_option("--sample", v_sample, "query sample index")->capture_default_str();
  ve->add_option("--threshold", v_threshold, "acceptance threshold")->capture_default_str();

  // ---- eval ----
  auto* ev = app.add_subcommand("eval", "verification metrics on held-out identities");
  ev->set_config("--config", "", "flat key=value config file");
  std::string ee_model, ee_data, ee_out;
  std::size_t ee_groups = 16, ee_n = 4, ee_trials = 20;
  ev->add_option("--model", ee_model, "model checkpoint")->required();
  ev->add_option("--data", ee_data, "dataset manifest")->required();
  ev->add_option("--groups", ee_groups, "groups per trial (B)")->capture_default_str();
  ev->add_option("--group-size", ee_n, "members per group (n)")->capture_default_str();
  ev->add_option("--trials", ee_trials, "trial count")->capture_default_str();
  ev->add_option("--out", ee_out, "output directory for records + ROC file");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "pooling/loss ablation matrix + sweeps");
  ab->set_config("--config", "", "flat key=value config file");
  TrainFlags af;
  std::string a_data, a_out;
  std::size_t a_groups = 16, a_trials = 20;
  ab->add_option("--data", a_data, "dataset manifest")->required();
  ab->add_option("--groups", a_groups, "groups per eval trial (B)")->capture_default_str();
  ab->add_option("--trials", a_trials, "eval trial count")->capture_default_str();
  ab->add_option("--out", a_out, "output directory for records");
  add_train_options(ab, af);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the error message
    return code == 0 ? 0 : 2;
  }

  if (*gen) {
    Rng rng(seed);
    Rng stream = rng.split("gen");
    const DatasetSplit data = gen_synthetic(g_ids, g_samples, g_din, g_sep, g_noise, stream);
    const fs::path manifest(g_out);
    write_embeddings(data, manifest, manifest.stem().string());
    std::printf("wrote %zu train / %zu validation / %zu test identities to %s\n",
                data.train.size(), data.validation.size(), data.test.size(), g_out.c_str());
    return 0;
  }

  if (*tr) {
    const DatasetSplit data = load_embeddings(t_data);
    TrainConfig cfg = resolve_train_config(tf, data.d_in);
    cfg.seed = seed;
    TrainOutcome outcome = train(cfg, data);
    checkpoint_save(outcome.model, t_out);
    const std::string report_path = t_report.empty() ? t_out + ".report" : t_report;
    write_train_report(outcome.report, report_path);
    if (outcome.report.epochs.empty()) {
      std::printf("no epochs run; wrote initialized checkpoint to %s\n", t_out.c_str());
    } else {
      std::printf("trained %zu epochs; best validation AUC %.4f at epoch %zu; checkpoint %s\n",
                  outcome.report.epochs.size(), outcome.report.best_val_auc,
                  outcome.report.best_epoch, t_out.c_str());
    }
    return 0;
  }

  if (*en) {
    AggModel model = checkpoint_load(e_model);
    const DatasetSplit data = load_embeddings(e_data);
    GroupStore store;
    store.retain_samples = e_retain;
    for (const auto& [gid, members] : read_group_manifest(e_groups)) {
      Tensor samples({members.size(), data.d_in});
      std::vector<std::uint64_t> handles;
      for (std::size_t i = 0; i < members.size(); ++i) {
        const IdentityRecord& rec = find_identity(data, members[i]);
        if (e_sample >= rec.samples.size()) {
          throw NotFoundError("identity " + std::to_string(members[i]) + " has no sample " +
                              std::to_string(e_sample));
        }
        const auto& s = rec.samples[e_sample];
        std::copy(s.begin(), s.end(), samples.row(i).begin());
        handles.push_back(members[i]);
      }
      enroll(store, gid, samples, model, handles);
    }
    store_save(store, e_out);
    std::printf("enrolled %zu groups into %s\n", store.groups.size(), e_out.c_str());
    return 0;
  }

  if (*ve) {
    AggModel model = checkpoint_load(v_model);
    const DatasetSplit data = load_embeddings(v_data);
    const GroupStore store = store_load(v_store);
    const IdentityRecord& rec = find_identity(data, v_identity);
    if (v_sample >= rec.samples.size()) {
      throw NotFoundError("identity " + std::to_string(v_identity) + " has no sample " +
                          std::to_string(v_sample));
    }
    const VerifyDecision d = verify(store, v_group, rec.samples[v_sample], model, v_threshold);
    std::printf("score=%.6f threshold=%.6f decision=%s\n", d.score, d.threshold,
                d.accept ? "accept" : "reject");
    return d.accept ? 0 : 1;
  }

  if (*ev) {
    AggModel model = checkpoint_load(ee_model);
    const DatasetSplit data = load_embeddings(ee_data);
    Rng rng(seed);
    Rng stream = rng.split("eval");
    const EvalRun run = run_eval(model, data.test, ee_groups, ee_n, ee_trials, stream);
    const EvalReport& r = run.report;
    std::printf("positives=%zu negatives=%zu\n", r.positives, r.negatives);
    std::printf("accuracy@0.5=%.4f auc=%.4f ptp@1%%=%.4f ptp@5%%=%.4f ptp@10%%=%.4f\n",
                r.accuracy, r.auc, r.ptp_at_1, r.ptp_at_5, r.ptp_at_10);
    if (!ee_out.empty()) {
      fs::create_directories(ee_out);
      write_roc(run.curve, fs::path(ee_out) / "roc.txt");
      std::ofstream records(fs::path(ee_out) / "eval.records");
      if (!records) throw IoError("cannot write eval records");
      append_report_records(records, "eval",
                            {{std::string("eval"), r}});
      std::printf("wrote %s/roc.txt and %s/eval.records\n", ee_out.c_str(), ee_out.c_str());
    }
    return 0;
  }

  if (*ab) {
    const DatasetSplit data = load_embeddings(a_data);
    TrainConfig cfg = resolve_train_config(af, data.d_in);
    cfg.seed = seed;
    EvalProtocol proto;
    proto.b_groups = a_groups;
    proto.n = cfg.group_size;
    proto.trials = a_trials;
    proto.seed = seed;
    const AblationResult res = run_ablation(cfg, data, proto);
    print_report_table(stdout, "pooling/loss ablation (desk scale):", res.table, true);
    print_report_table(stdout, "group-size sweep:", res.size_sweep);
    print_report_table(stdout, "binary vs real:", res.binary_vs_real);
    if (!a_out.empty()) {
      fs::create_directories(a_out);
      write_ablation_records(res, fs::path(a_out) / "ablation.records");
      std::printf("wrote %s/ablation.records\n", a_out.c_str());
    }
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
