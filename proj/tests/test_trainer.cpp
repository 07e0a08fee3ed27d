#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "thzmec/trainer.hpp"

using namespace thzmec;
namespace fs = std::filesystem;

namespace {

Config small() {
  Config c = profile_config("micro");
  c.env.num_slots = 8;
  c.ppo.minibatch = 16;
  c.ppo.epochs = 2;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("thzmec_trainer_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(DeriveSeed, StableAndSpread) {
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
  EXPECT_NE(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
  EXPECT_NE(derive_seed(0, 0, 0), derive_seed(1, 0, 0));
}

TEST(ValueNorm, TracksMeanAndVariance) {
  ValueNorm n;
  n.update({1.0, 2.0, 3.0});
  n.update({4.0, 5.0});
  EXPECT_NEAR(n.mean, 3.0, 1e-12);
  EXPECT_NEAR(n.var, 2.0, 1e-12);
  EXPECT_NEAR(n.denormalize(n.normalize(7.5)), 7.5, 1e-12);
}

TEST(Bundle, AgentLayout) {
  const Config c = small();
  PolicyBundle r(c, Algo::kRmappo, 0);
  ASSERT_EQ(r.num_agents(), kNumRoles);
  int total = 0;
  for (int k = 0; k < r.num_agents(); ++k) total += r.act_dim(k);
  PolicyBundle g(c, Algo::kGmappo, 0);
  ASSERT_EQ(g.num_agents(), 1);
  EXPECT_EQ(g.act_dim(0), total);
  EXPECT_EQ(g.active_dims(0, 3), 2 + 4 * 3);
  EXPECT_EQ(r.bounds(static_cast<int>(Role::kPower), 0).hi, c.net.p_max_watt);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const auto dir = scratch("ckpt");
  const Config c = small();
  TrainOptions o;
  o.seed = 3;
  o.episodes = 2;
  auto res = train(c, Algo::kRmappo, o);
  res.bundle->save((dir / "a.bin").string());
  auto back = PolicyBundle::load((dir / "a.bin").string(), c);
  back->save((dir / "b.bin").string());
  EXPECT_EQ(slurp(dir / "a.bin"), slurp(dir / "b.bin"));
  EXPECT_EQ(back->version(), res.bundle->version());

  EvalOptions eo;
  eo.episodes = 2;
  eo.seed = 11;
  EXPECT_EQ(evaluate(back.get(), c, eo).mean_cost, evaluate(res.bundle.get(), c, eo).mean_cost);
}

TEST(Checkpoint, RejectsOtherConfigAndCorruption) {
  const auto dir = scratch("ckpt_bad");
  const Config c = small();
  PolicyBundle b(c, Algo::kGmappo, 1);
  const auto path = (dir / "c.bin").string();
  b.save(path);
  Config other = c;
  other.env.xi += 1.0;
  EXPECT_THROW(PolicyBundle::load(path, other), CheckpointConfigMismatch);
  EXPECT_THROW(PolicyBundle::load((dir / "missing.bin").string(), c), CheckpointError);
  std::string bytes = slurp(path);
  bytes[bytes.size() / 2] ^= 0x5a;
  std::ofstream(path, std::ios::binary) << bytes;
  try {
    PolicyBundle::load(path, c);
    FAIL();
  } catch (const CheckpointConfigMismatch&) {
    FAIL() << "corruption must not be reported as a config mismatch";
  } catch (const CheckpointError&) {
  }
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  Config c = small();
  c.ppo.lr = 0.0;
  PolicyBundle fresh(c, Algo::kRmappo, 5);
  TrainOptions o;
  o.seed = 5;
  o.episodes = 1;
  auto res = train(c, Algo::kRmappo, o);
  const auto a = fresh.all_params(), b = res.bundle->all_params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
  EXPECT_EQ(res.bundle->version(), 1);
  EXPECT_EQ(res.env_steps, c.env.num_slots);
  EXPECT_EQ(res.updates.size(), static_cast<std::size_t>(kNumRoles));
}

TEST(Train, DeterministicForSeedAndSensitiveToIt) {
  const Config c = small();
  TrainOptions o;
  o.seed = 2;
  o.episodes = 2;
  const auto a = train(c, Algo::kGmappo, o);
  const auto b = train(c, Algo::kGmappo, o);
  ASSERT_EQ(a.episodes.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) EXPECT_EQ(a.episodes[i].ret, b.episodes[i].ret);
  o.seed = 9;
  const auto d = train(c, Algo::kGmappo, o);
  EXPECT_NE(a.episodes[0].ret, d.episodes[0].ret);
  EXPECT_EQ(a.updates.size(), 2u);
  EXPECT_EQ(a.updates[0].agent, "gmappo");
}

TEST(Train, EpisodeBudgetFromStepLimit) {
  Config c = small();
  c.ppo.max_steps = 100;
  EXPECT_EQ(episodes_for_budget(c), 100 / c.env.num_slots);
}

TEST(Evaluate, SummaryEqualsReaggregatedSlots) {
  const Config c = small();
  EvalOptions o;
  o.episodes = 3;
  o.seed = 4;
  o.fairness = FairnessKind::kAll;
  const auto rep = evaluate(nullptr, c, o);
  ASSERT_EQ(rep.episodes.size(), 3u);
  ASSERT_EQ(rep.slots.size(), static_cast<std::size_t>(3 * c.env.num_slots * c.env.num_uavs));
  double total = 0.0;
  for (int e = 0; e < 3; ++e) {
    double sum = 0.0;
    int viol = 0;
    for (const auto& s : rep.slots)
      if (s.episode == e) {
        sum += s.m.utility;
        viol += s.m.slack.violated();
      }
    EXPECT_EQ(rep.episodes[e].violations, viol);
    EXPECT_NEAR(rep.episodes[e].mean_cost, sum / c.env.num_slots, 1e-12 * std::abs(sum));
    total += rep.episodes[e].mean_cost;
  }
  EXPECT_NEAR(rep.mean_cost, total / 3, 1e-12 * std::abs(total));
  EXPECT_EQ(rep.violations, rep.episodes[0].violations + rep.episodes[1].violations + rep.episodes[2].violations);
  o.fairness.reset();
  EXPECT_THROW(evaluate(nullptr, c, o), DomainError);
}

TEST(Sweep, RowsMatchIndependentEvaluations) {
  const Config c = small();
  PolicyBundle b(c, Algo::kRmappo, 7);
  const auto rows = sweep_alpha_fixed(b, c, {0.0, 0.5, 1.0}, 2, 3);
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows.back().label, "learned");
  EXPECT_TRUE(std::isnan(rows.back().alpha));
  for (int i = 0; i < 3; ++i) {
    EvalOptions o;
    o.episodes = 2;
    o.seed = 3;
    o.fixed_alpha = rows[i].alpha;
    EXPECT_EQ(rows[i].mean_cost, evaluate(&b, c, o).mean_cost);
  }
  EvalOptions o;
  o.episodes = 2;
  o.seed = 3;
  EXPECT_EQ(rows.back().mean_cost, evaluate(&b, c, o).mean_cost);
  EXPECT_THROW(sweep_alpha_fixed(b, c, {1.5}, 1, 0), DomainError);
}

TEST(Sweep, ZeroOffloadSpendsNothingOnTheLinkOrServer) {
  const Config c = small();
  PolicyBundle b(c, Algo::kRmappo, 8);
  EvalOptions o;
  o.episodes = 1;
  o.fixed_alpha = 0.0;
  const auto rep = evaluate(&b, c, o);
  for (const auto& s : rep.slots) {
    EXPECT_EQ(s.m.e_ul, 0.0);
    EXPECT_EQ(s.m.e_dl, 0.0);
    EXPECT_EQ(s.m.e_mec, 0.0);
  }
}

TEST(Csv, SameSchemaForBothAlgorithms) {
  const auto dir = scratch("csv");
  const Config c = small();
  TrainOptions o;
  o.episodes = 1;
  for (Algo a : {Algo::kRmappo, Algo::kGmappo}) {
    const auto res = train(c, a, o);
    const std::string tag(algo_name(a));
    write_episodes_csv((dir / (tag + "_ep.csv")).string(), res.episodes);
    write_slots_csv((dir / (tag + "_slots.csv")).string(), res.slots);
    write_updates_csv((dir / (tag + "_upd.csv")).string(), res.updates);
  }
  for (const char* f : {"_ep.csv", "_slots.csv", "_upd.csv"}) {
    std::ifstream r(dir / ("rmappo" + std::string(f))), g(dir / ("gmappo" + std::string(f)));
    std::string hr, hg;
    std::getline(r, hr);
    std::getline(g, hg);
    EXPECT_EQ(hr, hg) << f;
    EXPECT_FALSE(hr.empty());
  }
}
