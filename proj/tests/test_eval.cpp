#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "aggnet/dataset.hpp"
#include "aggnet/errors.hpp"
#include "aggnet/evalharness.hpp"
#include "aggnet/model.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

using aggnet::AggModel;
using aggnet::DatasetSplit;
using aggnet::IdentityRecord;
using aggnet::ModelConfig;
using aggnet::Pooling;
using aggnet::Rng;
using aggnet::Tensor;

namespace {

AggModel tiny_model(bool hashing, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.d_in = 6;
  cfg.hidden = {};
  cfg.d = 4;
  cfg.pooling = Pooling::kSum;
  cfg.hash.enabled = hashing;
  Rng rng(seed);
  return AggModel::init(cfg, rng);
}

// d_in == d identity feature map: embeddings are L2-normalized inputs.
AggModel transparent_model() {
  ModelConfig cfg;
  cfg.d_in = 4;
  cfg.hidden = {};
  cfg.d = 4;
  cfg.pooling = Pooling::kSum;
  cfg.hash.enabled = false;
  Rng rng(3);
  AggModel m = AggModel::init(cfg, rng);
  m.features.layers[0].W.fill(0.0);
  for (std::size_t i = 0; i < 4; ++i) m.features.layers[0].W(i, i) = 1.0;
  m.features.layers[0].b.fill(0.0);
  return m;
}

std::vector<IdentityRecord> one_hot_identities(std::size_t count, std::size_t d_in) {
  std::vector<IdentityRecord> ids;
  for (std::uint32_t i = 0; i < count; ++i) {
    IdentityRecord rec;
    rec.identity_id = i;
    std::vector<double> v(d_in, 0.0);
    v[i % d_in] = 1.0;
    rec.samples = {v, v};
    ids.push_back(std::move(rec));
  }
  return ids;
}

}  // namespace

TEST_CASE("evaluation pools the advertised number of scores", "[eval]") {
  Rng data_rng(101);
  const DatasetSplit data = aggnet::gen_synthetic(60, 4, 6, 3.0, 0.3, data_rng);
  const AggModel model = tiny_model(true, 5);

  const std::size_t B = 3, n = 2, trials = 4;
  Rng rng(9);
  const aggnet::EvalRun run = aggnet::run_eval(model, data.test, B, n, trials, rng);

  REQUIRE(run.pos.size() == trials * B * n);
  REQUIRE(run.neg.size() == trials * B * n * (B - 1));
  REQUIRE(run.report.positives == run.pos.size());
  REQUIRE(run.report.negatives == run.neg.size());
  REQUIRE(run.report.auc >= 0.0);
  REQUIRE(run.report.auc <= 1.0);
  REQUIRE_FALSE(run.curve.points.empty());
}

TEST_CASE("a separable protocol reaches an exact unit AUC", "[eval]") {
  // Two orthogonal zero-noise identities and an identity feature map: every
  // positive scores strictly above every negative, so the pooled AUC is 1.
  const std::vector<IdentityRecord> ids = one_hot_identities(2, 4);
  const AggModel model = transparent_model();

  Rng rng(21);
  const aggnet::EvalRun run = aggnet::run_eval(model, ids, 2, 1, 1, rng);
  REQUIRE(run.pos.size() == 2);
  REQUIRE(run.neg.size() == 2);
  REQUIRE(run.report.auc == 1.0);
  REQUIRE(run.report.accuracy == 1.0);
  REQUIRE(run.report.ptp_at_1 == 1.0);
}

TEST_CASE("evaluation replays bit-for-bit from the stream seed", "[eval]") {
  Rng data_rng(103);
  const DatasetSplit data = aggnet::gen_synthetic(60, 4, 6, 3.0, 0.3, data_rng);
  const AggModel model = tiny_model(true, 5);

  Rng r1(33), r2(33), r3(34);
  const aggnet::EvalRun a = aggnet::run_eval(model, data.test, 2, 2, 3, r1);
  const aggnet::EvalRun b = aggnet::run_eval(model, data.test, 2, 2, 3, r2);
  const aggnet::EvalRun c = aggnet::run_eval(model, data.test, 2, 2, 3, r3);

  REQUIRE(a.pos == b.pos);
  REQUIRE(a.neg == b.neg);
  REQUIRE(a.report.auc == b.report.auc);
  REQUIRE((a.pos != c.pos || a.neg != c.neg));
}

TEST_CASE("evaluation validates its inputs", "[eval]") {
  Rng data_rng(107);
  const DatasetSplit data = aggnet::gen_synthetic(30, 4, 6, 3.0, 0.3, data_rng);
  const AggModel model = tiny_model(true, 5);

  Rng rng(1);
  REQUIRE_THROWS_AS(aggnet::run_eval(model, data.test, 2, 2, 0, rng), aggnet::ConfigError);
  // The test split has 3 identities; a trial needs B*n = 6.
  REQUIRE_THROWS_AS(aggnet::run_eval(model, data.test, 3, 2, 1, rng), aggnet::SamplingError);
}

TEST_CASE("the convenience wrapper matches a hand-built stream", "[eval]") {
  Rng data_rng(109);
  const DatasetSplit data = aggnet::gen_synthetic(30, 4, 6, 3.0, 0.3, data_rng);
  const AggModel model = tiny_model(false, 5);

  const aggnet::EvalReport via_wrapper = aggnet::eval_with(model, data.test, 2, 1, 3, 77);
  Rng master(77);
  Rng stream = master.split("eval");
  const aggnet::EvalReport manual =
      aggnet::run_eval(model, data.test, 2, 1, 3, stream).report;

  REQUIRE(via_wrapper.auc == manual.auc);
  REQUIRE(via_wrapper.accuracy == manual.accuracy);
  REQUIRE(via_wrapper.ptp_at_1 == manual.ptp_at_1);
  REQUIRE(via_wrapper.ptp_at_5 == manual.ptp_at_5);
  REQUIRE(via_wrapper.ptp_at_10 == manual.ptp_at_10);
  REQUIRE(via_wrapper.positives == manual.positives);
  REQUIRE(via_wrapper.negatives == manual.negatives);
}

TEST_CASE("the published reference table holds the expected rows", "[eval]") {
  REQUIRE(std::size(aggnet::kReferenceAblation) == 5);
  const auto& rows = aggnet::kReferenceAblation;
  REQUIRE(rows[0].auc == 0.80);
  REQUIRE(rows[0].accuracy == 0.74);
  REQUIRE(rows[1].label == std::string("sum-wmw"));
  REQUIRE(rows[1].auc == 0.93);
  REQUIRE(rows[2].label == std::string("gem-wmw"));
  REQUIRE(rows[2].ptp_at_5 == 0.66);
  REQUIRE(rows[3].label == std::string("netvlad-wce"));
  REQUIRE(rows[3].ptp_at_1 == 0.34);
  REQUIRE(rows[4].label == std::string("netvlad-wmw"));
  REQUIRE(rows[4].accuracy == 0.92);
  REQUIRE(rows[4].ptp_at_1 == 0.46);
  REQUIRE(rows[4].ptp_at_5 == 0.75);
  REQUIRE(rows[4].ptp_at_10 == 0.87);
  REQUIRE(rows[4].auc == 0.95);
}

TEST_CASE("the ablation harness produces the full grid", "[eval][slow]") {
  Rng data_rng(113);
  const DatasetSplit data = aggnet::gen_synthetic(160, 4, 6, 3.0, 0.3, data_rng);

  aggnet::TrainConfig base;
  base.model.d_in = 6;
  base.model.hidden = {};
  base.model.d = 4;
  base.model.clusters = 2;
  base.lr = 0.05;
  base.momentum = 0.0;
  base.weight_decay = 0.0;
  base.batch_size = 2;
  base.group_size = 2;
  base.max_epochs = 1;
  base.val_batches = 1;
  base.seed = 5;

  aggnet::EvalProtocol proto;
  proto.b_groups = 8;
  proto.n = 2;
  proto.trials = 2;
  proto.seed = 11;

  const aggnet::AblationResult res = aggnet::run_ablation(base, data, proto);

  REQUIRE(res.table.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(res.table[i].label == aggnet::kReferenceAblation[i].label);
    REQUIRE(res.table[i].report.positives == proto.trials * proto.b_groups * proto.n);
    REQUIRE(res.table[i].report.auc >= 0.0);
    REQUIRE(res.table[i].report.auc <= 1.0);
  }

  REQUIRE(res.size_sweep.size() == 3);
  REQUIRE(res.size_sweep[0].label == "n=2");
  REQUIRE(res.size_sweep[1].label == "n=4");
  REQUIRE(res.size_sweep[2].label == "n=8");
  const std::size_t ids_per_trial = proto.b_groups * proto.n;
  const std::size_t sizes[] = {2, 4, 8};
  for (std::size_t i = 0; i < 3; ++i) {
    REQUIRE(res.size_sweep[i].report.positives == proto.trials * ids_per_trial);
    REQUIRE(res.size_sweep[i].report.negatives ==
            proto.trials * ids_per_trial * (ids_per_trial / sizes[i] - 1));
  }

  REQUIRE(res.binary_vs_real.size() == 2);
  REQUIRE(res.binary_vs_real[0].label == "binary");
  REQUIRE(res.binary_vs_real[1].label == "real");
  // The binary row is the trained netvlad-wmw row, restated.
  REQUIRE(res.binary_vs_real[0].report.auc == res.table[4].report.auc);
  REQUIRE(res.binary_vs_real[0].report.accuracy == res.table[4].report.accuracy);

  // Record emission: one JSON object per row, grouped by section.
  const fs::path dir = fs::temp_directory_path() / "aggnet_eval_records";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path records = dir / "eval.records";
  aggnet::write_ablation_records(res, records);

  std::ifstream in(records);
  REQUIRE(in.good());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  REQUIRE(lines.size() == 10);
  for (const std::string& line : lines) {
    REQUIRE(line.front() == '{');
    REQUIRE(line.back() == '}');
    REQUIRE(line.find("\"label\":") != std::string::npos);
    REQUIRE(line.find("\"auc\":") != std::string::npos);
  }
  REQUIRE(lines[0].find("\"section\":\"ablation\"") != std::string::npos);
  REQUIRE(lines[5].find("\"section\":\"size_sweep\"") != std::string::npos);
  REQUIRE(lines[8].find("\"section\":\"binary_vs_real\"") != std::string::npos);
  REQUIRE(lines[9].find("\"label\":\"real\"") != std::string::npos);
}
