#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "hypertea/gradcheck.hpp"
#include "hypertea/gradsuite.hpp"
#include "hypertea/pipeline.hpp"
#include "test_util.hpp"

using namespace hypertea;
using testutil::rand_tensor;

constexpr double kGradTol = 1e-4;

namespace {

PipelineConfig tiny_config() {
  PipelineConfig cfg;
  cfg.widths = {2, 4, 4};
  cfg.frames = 5;
  cfg.batch = 2;
  cfg.epochs = 1;
  cfg.seed = 3;
  return cfg;
}

std::string make_tiny_dataset(const std::string& name, int64_t n, int64_t val) {
  SceneConfig scene;
  scene.width = 32;
  scene.height = 32;
  std::string root = ::testing::TempDir() + name;
  std::filesystem::remove_all(root);
  generate_dataset(root, n, val, scene, 77);
  return root;
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, RoundTripIdentity) {
  PipelineConfig cfg;
  cfg.widths = {8, 16, 32};
  cfg.lr = 0.004;
  cfg.variant = "gtem_only";
  cfg.seed = 99;
  std::string text = serialize_config(cfg);
  PipelineConfig back = parse_config(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.widths, cfg.widths);
  EXPECT_EQ(back.variant, "gtem_only");
  EXPECT_EQ(back.seed, 99u);
}

TEST(Config, DefaultsMatchReferenceOperatingPoint) {
  PipelineConfig cfg = parse_config("");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.01);
  EXPECT_DOUBLE_EQ(cfg.momentum, 0.937);
  EXPECT_DOUBLE_EQ(cfg.weight_decay, 5e-4);
  EXPECT_DOUBLE_EQ(cfg.nms_iou, 0.65);
  EXPECT_DOUBLE_EQ(cfg.conf_thresh, 0.001);
  EXPECT_EQ(cfg.frames, 5);
  EXPECT_DOUBLE_EQ(cfg.tau, 8.0);
  EXPECT_EQ(cfg.ltem_layers, 1);
  EXPECT_EQ(cfg.patch_size, 2);
  EXPECT_EQ(cfg.batch, 4);
  EXPECT_EQ(cfg.epochs, 50);
  EXPECT_DOUBLE_EQ(cfg.lambda_reg, 5.0);
}

TEST(Config, UnknownKeyIsHardError) {
  EXPECT_THROW(parse_config("learning_rate = 0.1\n"), NumericsError);
  EXPECT_THROW(parse_config("variant = fancy\n"), NumericsError);
  // Comments and blank lines are fine.
  PipelineConfig cfg = parse_config("# a comment\n\nlr = 0.5 # inline\n");
  EXPECT_DOUBLE_EQ(cfg.lr, 0.5);
}

TEST(Model, ForwardShapeChain) {
  PipelineConfig cfg;
  cfg.widths = {4, 8, 8};
  Rng rng(1);
  HyperTeaModel<float> model(cfg, rng);
  auto clip = rand_tensor<float>({5, 1, 64, 64}, rng, 0.0, 1.0, false);
  auto pred = model.forward(clip, false);
  EXPECT_EQ(pred.obj.shape(), (Shape{1, 1, 8, 8}));
  EXPECT_EQ(pred.cls.shape(), (Shape{1, 1, 8, 8}));
  EXPECT_EQ(pred.reg.shape(), (Shape{1, 4, 8, 8}));
  EXPECT_EQ(pred.stride, 8);

  auto short_clip = rand_tensor<float>({3, 1, 64, 64}, rng, 0.0, 1.0, false);
  EXPECT_THROW(model.forward(short_clip, false), NumericsError);
}

TEST(Model, VariantsShareShapeAndPrune) {
  Rng data_rng(2);
  auto clip = rand_tensor<float>({5, 1, 32, 32}, data_rng, 0.0, 1.0, false);
  for (const char* variant : {"full", "gtem_only", "ltem_only"}) {
    PipelineConfig cfg = tiny_config();
    cfg.variant = variant;
    Rng rng(4);
    HyperTeaModel<float> model(cfg, rng);
    auto pred = model.forward(clip, false);
    EXPECT_EQ(pred.obj.shape(), (Shape{1, 1, 4, 4})) << variant;
  }
  PipelineConfig full = tiny_config(), gtem_only = tiny_config();
  gtem_only.variant = "gtem_only";
  Rng r1(4), r2(4);
  HyperTeaModel<float> m_full(full, r1), m_g(gtem_only, r2);
  EXPECT_LT(m_g.collect().param_count(), m_full.collect().param_count());
}

TEST(Model, DeterministicBitExact) {
  auto run = [] {
    PipelineConfig cfg = tiny_config();
    Rng rng(cfg.seed);
    HyperTeaModel<float> model(cfg, rng);
    Rng data_rng(8);
    auto clip = rand_tensor<float>({5, 1, 32, 32}, data_rng, 0.0, 1.0, false);
    return model.forward(clip, false);
  };
  auto a = run();
  auto b = run();
  for (int64_t i = 0; i < a.obj.numel(); ++i) EXPECT_EQ(a.obj.data()[i], b.obj.data()[i]);
  for (int64_t i = 0; i < a.reg.numel(); ++i) EXPECT_EQ(a.reg.data()[i], b.reg.data()[i]);
}

TEST(Model, GradCheckEndToEnd) {
  auto r = gradcheck_pipeline();
  EXPECT_LE(r.report.max_rel_err, kGradTol) << r.report.worst;
  EXPECT_TRUE(r.ok);
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  PipelineConfig cfg = tiny_config();
  std::string out = ::testing::TempDir() + "hypertea_ckpt";
  std::filesystem::create_directories(out);
  Trainer<float> a(cfg, out);
  // Nudge state so the round trip is non-trivial.
  for (auto& [name, p] : a.optimizer().registry().params)
    const_cast<Tensor<float>&>(p).data()[0] += 0.25f;
  a.optimizer().velocity()[0][0] = 1.5f;
  a.save(out + "/state.ckpt");

  Trainer<float> b(cfg, out);  // same seed: same shapes, different values after load
  b.load(out + "/state.ckpt");
  const auto& pa = a.optimizer().registry().params;
  const auto& pb = b.optimizer().registry().params;
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    ASSERT_EQ(pa[i].first, pb[i].first);
    for (size_t j = 0; j < pa[i].second.data().size(); ++j)
      EXPECT_EQ(pa[i].second.data()[j], pb[i].second.data()[j]);
  }
  EXPECT_EQ(b.optimizer().velocity()[0][0], 1.5f);

  // A float checkpoint must not load into a double build.
  ParamRegistry<double> wrong;
  std::vector<std::vector<double>>* no_velocity = nullptr;
  EXPECT_THROW(load_checkpoint(out + "/state.ckpt", wrong, no_velocity), NumericsError);
}

TEST(Trainer, ZeroLrLeavesParamsUnchanged) {
  std::string root = make_tiny_dataset("hypertea_zero_lr", 2, 0);
  auto index = load_index(root);
  Dataset ds = load_dataset(root, index.train);
  PipelineConfig cfg = tiny_config();
  cfg.lr = 0.0;
  std::string out = ::testing::TempDir() + "hypertea_zero_lr_out";
  Trainer<float> t(cfg, out);
  std::vector<std::vector<float>> before;
  for (const auto& [name, p] : t.optimizer().registry().params) before.push_back(p.data());
  t.train_step(ds, {{0, 4}, {1, 4}}, 10);
  size_t i = 0;
  for (const auto& [name, p] : t.optimizer().registry().params) {
    for (size_t j = 0; j < p.data().size(); ++j) EXPECT_EQ(p.data()[j], before[i][j]);
    ++i;
  }
}

TEST(Trainer, ResumeMatchesUninterruptedBitExactly) {
  std::string root = make_tiny_dataset("hypertea_resume", 2, 0);
  auto index = load_index(root);
  Dataset ds = load_dataset(root, index.train);
  PipelineConfig cfg = tiny_config();
  std::vector<ClipRef> batch1 = {{0, 4}, {1, 3}};
  std::vector<ClipRef> batch2 = {{1, 4}, {0, 2}};

  std::string out_a = ::testing::TempDir() + "hypertea_resume_a";
  Trainer<float> a(cfg, out_a);
  a.train_step(ds, batch1, 10);
  a.save(out_a + "/mid.ckpt");
  a.train_step(ds, batch2, 10);

  std::string out_b = ::testing::TempDir() + "hypertea_resume_b";
  Trainer<float> b(cfg, out_b);
  b.load(out_a + "/mid.ckpt");
  EXPECT_EQ(b.step(), 1);
  b.train_step(ds, batch2, 10);

  const auto& pa = a.optimizer().registry().params;
  const auto& pb = b.optimizer().registry().params;
  for (size_t i = 0; i < pa.size(); ++i)
    for (size_t j = 0; j < pa[i].second.data().size(); ++j)
      EXPECT_EQ(pa[i].second.data()[j], pb[i].second.data()[j]) << pa[i].first;
  for (size_t i = 0; i < a.optimizer().velocity().size(); ++i)
    for (size_t j = 0; j < a.optimizer().velocity()[i].size(); ++j)
      EXPECT_EQ(a.optimizer().velocity()[i][j], b.optimizer().velocity()[i][j]);
}

TEST(Trainer, EpochZeroWritesInitialCheckpoint) {
  std::string root = make_tiny_dataset("hypertea_e0", 2, 1);
  auto index = load_index(root);
  Dataset train_ds = load_dataset(root, index.train);
  Dataset val_ds = load_dataset(root, index.val);
  PipelineConfig cfg = tiny_config();
  cfg.epochs = 0;
  std::string out = ::testing::TempDir() + "hypertea_e0_out";
  std::filesystem::remove_all(out);
  Trainer<float> t(cfg, out);
  auto result = t.fit(train_ds, val_ds);
  EXPECT_EQ(result.steps, 0);
  EXPECT_TRUE(std::filesystem::exists(out + "/last.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(out + "/best.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(out + "/metrics.json"));
}

TEST(Trainer, MetricsByteIdenticalAcrossRuns) {
  std::string root = make_tiny_dataset("hypertea_det", 3, 1);
  auto index = load_index(root);
  Dataset train_ds = load_dataset(root, index.train);
  Dataset val_ds = load_dataset(root, index.val);
  PipelineConfig cfg = tiny_config();

  auto run = [&](const std::string& tag) {
    std::string out = ::testing::TempDir() + tag;
    std::filesystem::remove_all(out);
    Trainer<float> t(cfg, out);
    t.fit(train_ds, val_ds);
    return file_bytes(out + "/metrics.json");
  };
  std::string m1 = run("hypertea_det_a");
  std::string m2 = run("hypertea_det_b");
  ASSERT_FALSE(m1.empty());
  EXPECT_EQ(m1, m2);
}
