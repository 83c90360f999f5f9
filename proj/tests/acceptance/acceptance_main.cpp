// Acceptance suite: one pass/fail line per criterion, non-zero exit if any
// criterion fails. Usage: attriq_acceptance <attriq-cli-path> <repo-root>
//
// Criteria 5-7 train the toy pipeline end to end and take several minutes;
// everything else completes in seconds.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "attriq/commands.hpp"
#include "attriq/fd_check.hpp"
#include "attriq/saliency.hpp"
#include "../helpers.hpp"

namespace fs = std::filesystem;
using namespace attriq;

namespace {

struct Outcome {
  int id;
  std::string name;
  bool ok;
  std::string detail;
};

std::vector<Outcome> g_outcomes;

void report(int id, const std::string& name, bool ok,
            const std::string& detail) {
  g_outcomes.push_back({id, name, ok, detail});
  std::printf("[%s] criterion %d: %s (%s)\n", ok ? "PASS" : "FAIL", id,
              name.c_str(), detail.c_str());
  std::fflush(stdout);
}

void run_criterion(int id, const std::string& name,
                   const std::function<std::pair<bool, std::string>()>& fn) {
  try {
    auto [ok, detail] = fn();
    report(id, name, ok, detail);
  } catch (const std::exception& e) {
    report(id, name, false, std::string("exception: ") + e.what());
  }
}

Tensor random_tensor(std::vector<std::size_t> shape, RandomStream& rng,
                     double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.data) v = scale * (2.0 * rng.next_unit() - 1.0);
  return t;
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.4g", v);
  return buf;
}

// ---------------------------------------------------------------- criterion 1

std::pair<bool, std::string> criterion1_math_core() {
  bool ok = true;
  std::ostringstream detail;

  // complement law of the anchor probability
  RandomStream rng(101);
  double worst_comp = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    Tensor e = random_tensor({32}, rng, 5.0);
    Tensor a = random_tensor({32}, rng);
    Tensor b = random_tensor({32}, rng);
    double p = attribute_prob(e, a, b);
    double q = attribute_prob(e, b, a);
    worst_comp = std::max(worst_comp, std::abs(p + q - 1.0));
  }
  ok = ok && worst_comp <= 1e-12;
  detail << "complement " << fmt(worst_comp);

  // simplex law after optimizer steps
  ParamGroup theta = ParamGroup::make("theta", Tensor::zeros({4, 5}));
  AdamOptimizer adam;
  std::vector<ParamGroup*> groups{&theta};
  double worst_simplex = 0.0;
  for (int step = 0; step < 50; ++step) {
    for (auto& g : theta.grad.data) g = 2.0 * rng.next_unit() - 1.0;
    adam.step(groups, 0.05);
    Tensor w = simplex_weights(theta.value);
    for (std::size_t r = 0; r < 4; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        if (w.at(r, c) < 0.0) ok = false;
        sum += w.at(r, c);
      }
      worst_simplex = std::max(worst_simplex, std::abs(sum - 1.0));
    }
  }
  ok = ok && worst_simplex <= 1e-9;
  detail << ", simplex " << fmt(worst_simplex);

  // loss spot values and non-negativity
  double ln2_err = std::abs(
      distortion_loss(Tensor::scalar(0.5), Tensor::scalar(0.5)) -
      std::log(2.0));
  double ln09_err = std::abs(
      distortion_loss(Tensor::scalar(0.9), Tensor::scalar(1.0)) +
      std::log(0.9));
  ok = ok && ln2_err <= 1e-12 && ln09_err <= 1e-12;
  for (int trial = 0; trial < 100; ++trial) {
    Tensor p = Tensor::zeros({6});
    Tensor t = Tensor::zeros({6});
    for (auto& v : p.data) v = rng.next_unit();
    for (auto& v : t.data) v = rng.next_unit();
    if (distortion_loss(p, t) < 0.0) ok = false;
  }
  detail << ", ln2 " << fmt(ln2_err) << ", ln0.9 " << fmt(ln09_err);

  // softmax row sums
  double worst_row = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Tape tp;
    Tensor m = random_tensor({5, 11}, rng, 40.0);
    auto s = tp.softmax_rows(tp.leaf(m));
    for (std::size_t r = 0; r < 5; ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < 11; ++c) sum += tp.value(s).at(r, c);
      worst_row = std::max(worst_row, std::abs(sum - 1.0));
    }
  }
  ok = ok && worst_row <= 1e-12;
  detail << ", softmax " << fmt(worst_row);
  return {ok, detail.str()};
}

// ---------------------------------------------------------------- criterion 2

AttributeRegistry acceptance_registry(const std::string& attributes_path,
                                      std::size_t dim,
                                      const std::vector<std::string>& subset) {
  return build_registry(attributes_path, "toy", dim, subset);
}

double mode_chain_fd(const AttributeRegistry& reg, FinetuneMode mode,
                     PromptMode pmode, std::size_t prompt_len,
                     std::uint64_t seed) {
  VitConfig c;
  c.image_size = 16;
  c.patch_size = 8;
  c.d_model = 16;
  c.layers = 2;
  c.heads = 2;
  c.embed_dim = reg.dim;
  c.mlp_ratio = 2;
  c.prompt_mode = pmode;
  c.prompt_len = prompt_len;
  DistortionModel m = init_distortion_model(c, reg, seed);
  Image img = testutil::make_texture(16, 16, 3, seed + 1);
  Tensor target = Tensor::zeros({reg.distortions.size()});
  target.data[0] = 0.6;
  std::vector<Tensor> deltas = anchor_deltas(reg);

  std::vector<ParamGroup*> trainables = trainable_params(m.vit, mode);
  m.theta.trainable = true;
  trainables.push_back(&m.theta);

  auto eval_loss = [&](bool want_grads) {
    Tape t;
    VitBinding b = bind_vit(t, m.vit);
    auto theta_leaf = t.leaf(m.theta.value, true);
    auto e = vit_forward(t, m.vit, b, t.leaf(image_as_tensor(img)));
    ScoringNodes sn = score_on_tape(t, e, theta_leaf, reg, deltas);
    auto loss = bce_on_tape(t, sn.dist_probs, target);
    double v = t.value(loss).data[0];
    if (want_grads) {
      t.backward(loss);
      for (std::size_t gi = 0; gi + 1 < trainables.size(); ++gi)
        trainables[gi]->grad =
            t.grad(b.vars[m.vit.index.at(trainables[gi]->name)]);
      m.theta.grad = t.grad(theta_leaf);
    }
    return v;
  };
  eval_loss(true);
  FdReport rep = fd_check(
      trainables, [&]() { return eval_loss(false); }, 1e-6, seed, 40);
  return rep.max_rel_error;
}

std::pair<bool, std::string> criterion2_gradients(
    const std::string& attributes_path) {
  std::ostringstream detail;
  bool ok = true;

  // (a) every diffcore op (generic weighted-sum probe)
  using V = std::vector<Tape::Var>;
  double op_worst = 0.0;
  auto probe = [&](std::vector<std::vector<std::size_t>> shapes,
                   std::function<Tape::Var(Tape&, const V&)> op,
                   std::uint64_t seed) {
    RandomStream rng(seed);
    std::vector<ParamGroup> groups;
    for (std::size_t i = 0; i < shapes.size(); ++i)
      groups.push_back(ParamGroup::make("in" + std::to_string(i),
                                        random_tensor(shapes[i], rng)));
    Tensor weights;
    auto loss_value = [&](bool want_grads) {
      Tape t;
      std::vector<Tape::Var> ins;
      for (auto& g : groups) ins.push_back(t.leaf(g.value, true));
      Tape::Var out = op(t, ins);
      if (weights.size() == 0) {
        RandomStream wrng(seed ^ 0xabcd);
        weights = random_tensor(t.value(out).shape, wrng);
      }
      Tape::Var loss = t.dot(out, t.constant(weights));
      double v = t.value(loss).data[0];
      if (want_grads) {
        t.backward(loss);
        for (std::size_t i = 0; i < groups.size(); ++i)
          groups[i].grad = t.grad(ins[i]);
      }
      return v;
    };
    loss_value(true);
    std::vector<ParamGroup*> ptrs;
    for (auto& g : groups) ptrs.push_back(&g);
    FdReport rep =
        fd_check(ptrs, [&]() { return loss_value(false); }, 1e-6, seed, 50);
    op_worst = std::max(op_worst, rep.max_rel_error);
  };

  probe({{3, 4}, {3, 4}}, [](Tape& t, const V& v) { return t.add(v[0], v[1]); }, 201);
  probe({{3, 4}, {3, 4}}, [](Tape& t, const V& v) { return t.sub(v[0], v[1]); }, 202);
  probe({{3, 4}, {3, 4}}, [](Tape& t, const V& v) { return t.mul(v[0], v[1]); }, 203);
  probe({{3, 4}, {4, 5}}, [](Tape& t, const V& v) { return t.matmul(v[0], v[1]); }, 204);
  probe({{3, 4}, {5, 4}}, [](Tape& t, const V& v) { return t.matmul_nt(v[0], v[1]); }, 205);
  probe({{3, 4}, {4}}, [](Tape& t, const V& v) { return t.add_rowvec(v[0], v[1]); }, 206);
  probe({{4, 6}}, [](Tape& t, const V& v) { return t.softmax_rows(v[0]); }, 207);
  probe({{3, 6}, {6}, {6}},
        [](Tape& t, const V& v) { return t.layernorm_rows(v[0], v[1], v[2]); },
        208);
  probe({{9}}, [](Tape& t, const V& v) { return t.sigmoid(v[0]); }, 209);
  probe({{9}}, [](Tape& t, const V& v) { return t.selu(v[0]); }, 210);
  probe({{9}}, [](Tape& t, const V& v) { return t.gelu(v[0]); }, 211);
  probe({{6}}, [](Tape& t, const V& v) { return t.l2_normalize(v[0]); }, 212);
  probe({{5}}, [](Tape& t, const V& v) { return t.one_minus(v[0]); }, 213);
  probe({{5}}, [](Tape& t, const V& v) { return t.log_clamped(t.sigmoid(v[0])); }, 214);
  probe({{6}, {6}}, [](Tape& t, const V& v) { return t.dot(v[0], v[1]); }, 215);
  probe({{3, 3}}, [](Tape& t, const V& v) { return t.mean_all(v[0]); }, 216);
  probe({{2, 4}, {3, 4}},
        [](Tape& t, const V& v) { return t.concat_rows(v[0], v[1]); }, 217);
  probe({{5, 4}}, [](Tape& t, const V& v) { return t.slice_rows(v[0], 1, 4); }, 218);
  probe({{4, 6}}, [](Tape& t, const V& v) { return t.slice_cols(v[0], 2, 5); }, 219);
  probe({{3, 2}, {3, 4}},
        [](Tape& t, const V& v) { return t.concat_cols({v[0], v[1]}); }, 220);
  probe({{1}, {1}, {1}},
        [](Tape& t, const V& v) { return t.stack_scalars({v[0], v[1], v[2]}); },
        221);
  probe({{12}}, [](Tape& t, const V& v) {
    auto idx = std::make_shared<std::vector<std::size_t>>(
        std::vector<std::size_t>{0, 7, 7, 11, 2, 5});
    return t.gather(v[0], idx, {6});
  }, 222);
  probe({{4, 8}, {8, 8}, {8, 8}, {8, 8}, {8, 8}},
        [](Tape& t, const V& v) {
          AttentionVars p;
          p.wq = v[1];
          p.bq = t.leaf(Tensor::zeros({8}), false);
          p.wk = v[2];
          p.bk = t.leaf(Tensor::zeros({8}), false);
          p.wv = v[3];
          p.bv = t.leaf(Tensor::zeros({8}), false);
          p.wo = v[4];
          p.bo = t.leaf(Tensor::zeros({8}), false);
          return multi_head_attention(t, v[0], p, 2);
        },
        223);
  probe({{3, 6}, {6, 12}, {12}, {12, 6}, {6}},
        [](Tape& t, const V& v) {
          MlpVars p{v[1], v[2], v[3], v[4]};
          return mlp_block(t, v[0], p);
        },
        224);
  ok = ok && op_worst <= 1e-4;
  detail << "ops " << fmt(op_worst);

  // (b) the scoring chain per fine-tune mode on a width-16 encoder
  AttributeRegistry reg = acceptance_registry(
      attributes_path, 16, {"gaussian_blur", "impulse_noise"});
  double shallow = mode_chain_fd(reg, FinetuneMode::kShallow,
                                 PromptMode::kShallow, 3, 230);
  double deep = mode_chain_fd(reg, FinetuneMode::kDeep, PromptMode::kDeep, 2,
                              231);
  double full = mode_chain_fd(reg, FinetuneMode::kFull, PromptMode::kNone, 0,
                              232);
  ok = ok && shallow <= 1e-4 && deep <= 1e-4 && full <= 1e-4;
  detail << ", shallow " << fmt(shallow) << ", deep " << fmt(deep) << ", full "
         << fmt(full);

  // (c) regressor MSE path
  {
    RegressorConfig rc;
    rc.input_dim = 8;
    rc.hidden1 = 8;
    rc.hidden2 = 8;
    rc.dropout = 0.0;
    RegressorModel m = init_regressor(rc, 240);
    RandomStream rng(241);
    Tensor x = random_tensor({6, 8}, rng);
    Tensor y = random_tensor({6, 1}, rng);
    auto eval_loss = [&](bool want_grads) {
      Tape t;
      RegressorBinding b;
      for (auto& g : m.groups) b.vars.push_back(t.leaf(g.value, true));
      auto pred = regressor_forward(t, m, b, t.leaf(x), false, nullptr);
      auto err = t.sub(pred, t.constant(y));
      auto loss = t.mean_all(t.mul(err, err));
      double v = t.value(loss).data[0];
      if (want_grads) {
        t.backward(loss);
        for (std::size_t gi = 0; gi < m.groups.size(); ++gi)
          m.groups[gi].grad = t.grad(b.vars[gi]);
      }
      return v;
    };
    eval_loss(true);
    auto groups = m.all_groups();
    FdReport rep =
        fd_check(groups, [&]() { return eval_loss(false); }, 1e-6, 242);
    ok = ok && rep.max_rel_error <= 1e-4;
    detail << ", regressor " << fmt(rep.max_rel_error);
  }

  // (d) saliency input gradient
  {
    VitConfig c;
    c.image_size = 16;
    c.patch_size = 8;
    c.d_model = 16;
    c.layers = 2;
    c.heads = 2;
    c.embed_dim = reg.dim;
    DistortionModel m = init_distortion_model(c, reg, 250);
    Image img = testutil::make_texture(16, 16, 3, 251);
    std::vector<Tensor> deltas = anchor_deltas(reg);
    Tape t;
    VitBinding b;
    for (const auto& g : m.vit.groups) b.vars.push_back(t.leaf(g.value, false));
    auto img_leaf = t.leaf(image_as_tensor(img), true);
    auto e = vit_forward(t, m.vit, b, img_leaf);
    auto theta_leaf = t.leaf(m.theta.value, false);
    ScoringNodes sn = score_on_tape(t, e, theta_leaf, reg, deltas);
    auto pick = std::make_shared<const std::vector<std::size_t>>(
        std::vector<std::size_t>{0});
    t.backward(t.gather(sn.dist_probs, pick, {1}));
    Tensor grad = t.grad(img_leaf);

    auto prob_of = [&](const Image& im) {
      Tensor emb = encode_image(m.vit, im);
      std::vector<double> probs = attribute_probs_for_embedding(emb, reg);
      Tensor w = simplex_weights(m.theta.value);
      std::vector<double> ap(reg.attrs_per_distortion);
      std::vector<double> wd(reg.attrs_per_distortion);
      for (std::size_t k = 0; k < reg.attrs_per_distortion; ++k) {
        ap[k] = probs[k];
        wd[k] = w.at(0, k);
      }
      return distortion_prob(ap, wd);
    };
    RandomStream rng(252);
    double h = 1e-5;
    double worst = 0.0;
    for (int probe_i = 0; probe_i < 60; ++probe_i) {
      std::size_t idx = rng.next_below(img.data.size());
      Image up = img, down = img;
      up.data[idx] += h;
      down.data[idx] -= h;
      double fd = (prob_of(up) - prob_of(down)) / (2 * h);
      double ad = grad.data[idx];
      if (std::abs(ad) <= 1e-7 && std::abs(fd) <= 1e-7) continue;
      worst = std::max(worst, std::abs(ad - fd) /
                                  std::max(1e-8, std::abs(ad) + std::abs(fd)));
    }
    ok = ok && worst <= 1e-4;
    detail << ", saliency " << fmt(worst);
  }
  return {ok, detail.str()};
}

// ---------------------------------------------------------------- criterion 3

std::pair<bool, std::string> criterion3_metric_oracles() {
  bool ok = true;
  // the five-level boundary list, exactly
  IntervalScheme scheme(5);
  std::vector<double> expect = {0.1, 0.3, 0.5, 0.7, 0.9};
  auto b = scheme.boundaries();
  for (std::size_t i = 0; i < 5; ++i)
    if (std::abs(b[i] - expect[i]) > 1e-15) ok = false;

  RandomStream rng(301);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    std::size_t n = 5 + rng.next_below(40);
    std::vector<double> x(n), y(n);
    for (auto& v : x) v = rng.next_unit() < 0.2 ? 0.5 : rng.next_unit();
    for (auto& v : y) v = rng.next_unit() < 0.2 ? 0.5 : rng.next_unit();
    worst = std::max(worst,
                     std::abs(plcc(x, y) - testutil::oracle_pearson(x, y)));
    worst = std::max(worst,
                     std::abs(srcc(x, y) - testutil::oracle_spearman(x, y)));
    Tensor px = Tensor::from({n}, std::vector<double>(x));
    Tensor py = Tensor::from({n}, std::vector<double>(y));
    worst = std::max(worst, std::abs(strength_rmse(px, py) -
                                     testutil::oracle_rmse(x, y)));
    int levels = 2 + static_cast<int>(rng.next_below(7));
    IntervalScheme sc(levels);
    std::vector<double> preds(n), targets(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      preds[i] = rng.next_unit();
      targets[i] = static_cast<double>(rng.next_below(levels + 1)) / levels;
      if (testutil::oracle_interval_hit(preds[i], targets[i], levels)) ++hits;
    }
    double acc = interval_accuracy(
        Tensor::from({n}, std::vector<double>(preds)),
        Tensor::from({n}, std::vector<double>(targets)), sc);
    worst = std::max(worst,
                     std::abs(acc - static_cast<double>(hits) / n));
  }
  ok = ok && worst <= 1e-9;
  return {ok, "boundaries exact, worst oracle gap " + fmt(worst)};
}

// ---------------------------------------------------------------- criterion 4

std::pair<bool, std::string> criterion4_generator(const std::string& workdir) {
  fs::path root = fs::path(workdir) / "c4";
  fs::create_directories(root / "sources");
  GeneratorConfig cfg;
  cfg.master_seed = 777;
  cfg.repeats = 10;
  cfg.out_dir = (root / "run_a").string();
  cfg.write_images = false;
  for (int i = 0; i < 1000; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "s%04d", i);
    std::string path = (root / "sources" / (std::string(name) + ".png")).string();
    if (!fs::exists(path))
      write_png(testutil::make_texture(16, 16, 3, 40000 + i), path);
    cfg.sources.push_back({name, path});
  }
  GenerateResult a = generate(cfg);
  bool ok = a.records.size() == 10000;

  std::map<std::string, int> per_source;
  std::size_t d = supported_distortions().size();
  std::vector<double> counts(d, 0.0);
  bool dup_free = true;
  for (const auto& rec : a.records) {
    ++per_source[rec.source_id];
    std::set<std::string> seen;
    for (const auto& sp : rec.applied)
      if (!seen.insert(sp.id).second) dup_free = false;
    counts[rec.applied.size() - 1] += 1.0;
  }
  for (const auto& [src, n] : per_source)
    if (n != 10) ok = false;
  ok = ok && dup_free;

  double expected = 10000.0 / static_cast<double>(d);
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  bool uniform = chi2 < 21.666;  // chi-square 0.99 quantile, 9 dof
  ok = ok && uniform;

  cfg.out_dir = (root / "run_b").string();
  GenerateResult bres = generate(cfg);
  std::ifstream fa(a.manifest_path, std::ios::binary);
  std::ifstream fb(bres.manifest_path, std::ios::binary);
  std::stringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  bool identical = sa.str() == sb.str() && !sa.str().empty();
  ok = ok && identical;

  return {ok, "10000 records, chi2 " + fmt(chi2) + " < 21.666, dup-free " +
                  (dup_free ? "yes" : "NO") + ", rerun identical " +
                  (identical ? "yes" : "NO")};
}

// ----------------------------------------------------------- criteria 5/6/7

struct DeskScale {
  std::string workdir;
  std::string attributes_path;
  AttributeRegistry registry;
  std::vector<ManifestRecord> records_a;
  std::string data_root_a;
  DistortionModel model;
  Tensor probs_a;       // attribute probabilities for pool A
  SourceSplit split_a;  // by-source split shared by criteria 5 and 6
  double srcc_a = 0.0;  // criterion 6 outcome, reused by criterion 7
  bool trained = false;
};

// Pilot-fixed schedule for the desk-scale run (floors from the build spec).
constexpr std::size_t kDeskEpochs = 12;
constexpr std::size_t kDeskWarmup = 2;
constexpr double kDeskLrMax = 1.2e-3;
constexpr std::size_t kDeskBatch = 32;
constexpr std::uint64_t kDeskSeed = 20240817;

void make_source_pool(const std::string& dir, int count, std::uint64_t base,
                      std::vector<SourceEntry>& out) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "t%05d", i);
    std::string path = dir + "/" + name + ".png";
    if (!fs::exists(path))
      write_png(testutil::make_texture(64, 64, 3, base + i), path);
    out.push_back({name, path});
  }
}

std::pair<bool, std::string> criterion5_distortion_id(DeskScale& ds) {
  auto t0 = std::chrono::steady_clock::now();
  fs::path root = fs::path(ds.workdir) / "desk";
  std::vector<std::string> dists = {"gaussian_blur", "impulse_noise",
                                    "contrast_scale"};

  GeneratorConfig cfg;
  cfg.master_seed = kDeskSeed;
  cfg.repeats = 10;
  cfg.distortions = dists;
  cfg.out_dir = (root / "pool_a").string();
  cfg.synthetic_scores = true;
  make_source_pool((root / "sources_a").string(), 200, 50000, cfg.sources);
  GenerateResult gen = generate(cfg);
  ds.records_a = gen.records;
  ds.data_root_a = cfg.out_dir;

  ds.registry = acceptance_registry(ds.attributes_path, 64, dists);
  ds.registry.digest = "acceptance";

  VitConfig vc;  // toy encoder defaults: 64x64, patch 8, width 64, 4 layers
  vc.embed_dim = ds.registry.dim;
  DistortionModel model = init_distortion_model(vc, ds.registry, kDeskSeed);
  TrainSchedule sched;
  sched.epochs = kDeskEpochs;
  sched.warmup_epochs = kDeskWarmup;
  sched.lr_max = kDeskLrMax;
  sched.batch_size = kDeskBatch;

  std::vector<std::string> sources;
  for (const auto& rec : ds.records_a) sources.push_back(rec.source_id);
  ds.split_a = split_by_source(sources, 0.8, 0.1, kDeskSeed);

  std::vector<ManifestRecord> train_records;
  for (std::size_t i : ds.split_a.train)
    train_records.push_back(ds.records_a[i]);
  for (std::size_t i : ds.split_a.val)
    train_records.push_back(ds.records_a[i]);

  TrainResult tr = train_distortion_model(model, train_records, ds.registry,
                                          FinetuneMode::kFull, sched,
                                          kDeskSeed, ds.data_root_a, 0,
                                          &std::cout);
  ds.model = std::move(model);
  ds.trained = true;

  std::vector<ManifestRecord> test_records;
  for (std::size_t i : ds.split_a.test) test_records.push_back(ds.records_a[i]);
  Tensor preds = predict_distortion_matrix(test_records, ds.model, ds.registry,
                                           ds.data_root_a, 0);
  Tensor gt = ground_truth_matrix(test_records, dists);
  IntervalScheme scheme(5);
  double acc = interval_accuracy(preds, gt, scheme);
  double rmse = strength_rmse(preds, gt);

  // attribute probabilities for the full pool, reused by criterion 6
  ds.probs_a = extract_attribute_probs(ds.records_a, ds.model, ds.registry,
                                       ds.data_root_a, 0);

  auto dt = std::chrono::duration_cast<std::chrono::seconds>(
                std::chrono::steady_clock::now() - t0)
                .count();
  bool ok = acc >= 0.85 && rmse <= 0.12;
  std::ostringstream detail;
  detail << "held-out accuracy " << fmt(acc) << " (>=0.85), rmse " << fmt(rmse)
         << " (<=0.12), train loss " << fmt(tr.epoch_losses.back()) << ", "
         << dt << "s";
  return {ok, detail.str()};
}

std::pair<bool, std::string> criterion6_regression(DeskScale& ds) {
  if (!ds.trained) return {false, "skipped: criterion 5 did not train"};
  std::vector<double> targets(ds.records_a.size());
  for (std::size_t i = 0; i < ds.records_a.size(); ++i)
    targets[i] = ds.records_a[i].score.value();

  RegressorConfig rc;
  rc.input_dim = ds.probs_a.shape[1];
  RegressorModel reg_model = init_regressor(rc, kDeskSeed + 1);
  RegressorSchedule rs;
  rs.epochs = 100;
  rs.lr_max = 1e-3;
  train_regressor(reg_model, ds.probs_a, targets, ds.split_a.train,
                  ds.split_a.val, rs, kDeskSeed + 1);

  std::vector<double> pred, truth;
  for (std::size_t i : ds.split_a.test) {
    std::vector<double> row(ds.probs_a.shape[1]);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = ds.probs_a.at(i, c);
    pred.push_back(predict_score(reg_model, row).raw);
    truth.push_back(targets[i]);
  }
  double s = srcc(pred, truth);
  double p = plcc(pred, truth);
  ds.srcc_a = s;
  bool ok = s >= 0.90 && p >= 0.90;
  return {ok, "held-out srcc " + fmt(s) + " plcc " + fmt(p) + " (>=0.90)"};
}

std::pair<bool, std::string> criterion7_zero_shot(DeskScale& ds) {
  if (!ds.trained) return {false, "skipped: criterion 5 did not train"};
  fs::path root = fs::path(ds.workdir) / "desk";
  std::vector<std::string> dists = ds.registry.distortion_ids();

  GeneratorConfig cfg;
  cfg.master_seed = kDeskSeed + 99;
  cfg.repeats = 10;
  cfg.distortions = dists;
  cfg.out_dir = (root / "pool_b").string();
  cfg.synthetic_scores = true;
  make_source_pool((root / "sources_b").string(), 100, 90000, cfg.sources);
  GenerateResult gen = generate(cfg);

  // frozen model from pool A scores the disjoint pool B
  Tensor probs_b = extract_attribute_probs(gen.records, ds.model, ds.registry,
                                           cfg.out_dir, 0);
  std::vector<double> targets(gen.records.size());
  std::vector<std::string> sources;
  for (std::size_t i = 0; i < gen.records.size(); ++i) {
    targets[i] = gen.records[i].score.value();
    sources.push_back(gen.records[i].source_id);
  }
  SourceSplit split = split_by_source(sources, 0.8, 0.1, kDeskSeed + 99);

  RegressorConfig rc;
  rc.input_dim = probs_b.shape[1];
  RegressorModel reg_model = init_regressor(rc, kDeskSeed + 2);
  RegressorSchedule rs;
  rs.epochs = 100;
  rs.lr_max = 1e-3;
  train_regressor(reg_model, probs_b, targets, split.train, split.val, rs,
                  kDeskSeed + 2);

  std::vector<double> pred, truth;
  for (std::size_t i : split.test) {
    std::vector<double> row(probs_b.shape[1]);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = probs_b.at(i, c);
    pred.push_back(predict_score(reg_model, row).raw);
    truth.push_back(targets[i]);
  }
  double s = srcc(pred, truth);
  double degradation = ds.srcc_a - s;
  bool ok = degradation <= 0.15;
  return {ok, "pool-b srcc " + fmt(s) + ", degradation " + fmt(degradation) +
                  " (<=0.15)"};
}

// ---------------------------------------------------------------- criterion 8

int run_cli(const std::string& cli, const std::string& args) {
  std::string cmd = cli + " " + args + " >> cli_log.txt 2>&1";
  int rc = std::system(cmd.c_str());
  return rc;
}

std::pair<bool, std::string> criterion8_pipeline(const std::string& cli,
                                                 const std::string& repo_root,
                                                 const std::string& workdir) {
  fs::path root = fs::absolute(fs::path(workdir) / "c8");
  fs::create_directories(root);
  std::vector<SourceEntry> sources;
  make_source_pool((root / "sources").string(), 8, 70000, sources);

  std::string attrs =
      (fs::path(repo_root) / "data" / "attributes_default.json").string();
  fs::path dataset = root / "dataset";
  fs::path registry = root / "registry.json";
  fs::path ckpt = root / "dist.ckpt";
  fs::path probs = root / "probs.csv";
  fs::path scores = root / "scores.csv";
  fs::path reg_ckpt = root / "reg.ckpt";
  fs::path dist_report = root / "dist_report.json";
  fs::path score_report = root / "score_report.json";
  fs::path sal_dir = root / "saliency";

  nlohmann::json cfg;
  cfg["seed"] = 99;
  cfg["workers"] = 2;
  cfg["generate"] = {{"sources_dir", (root / "sources").string()},
                     {"out", dataset.string()},
                     {"repeats", 2},
                     {"distortions", {"gaussian_blur", "impulse_noise"}},
                     {"synthetic_scores", true}};
  cfg["build_registry"] = {{"attributes", attrs},
                           {"dim", 32},
                           {"distortions", {"gaussian_blur", "impulse_noise"}},
                           {"out", registry.string()}};
  cfg["train_dist"] = {{"manifest", (dataset / "manifest.jsonl").string()},
                       {"registry", registry.string()},
                       {"mode", "full"},
                       {"out", ckpt.string()},
                       {"epochs", 2},
                       {"batch_size", 8},
                       {"lr_max", 1e-3},
                       {"image_size", 32},
                       {"d_model", 32},
                       {"layers", 1},
                       {"heads", 2}};
  cfg["extract"] = {{"manifest", (dataset / "manifest.jsonl").string()},
                    {"registry", registry.string()},
                    {"checkpoint", ckpt.string()},
                    {"out", probs.string()},
                    {"scores_out", scores.string()}};
  cfg["train_reg"] = {{"probs", probs.string()},
                      {"scores", scores.string()},
                      {"registry", registry.string()},
                      {"out", reg_ckpt.string()},
                      {"epochs", 5},
                      {"train_frac", 0.7},
                      {"val_frac", 0.15}};
  cfg["eval"] = {{"task", "dist"},
                 {"manifest", (dataset / "manifest.jsonl").string()},
                 {"registry", registry.string()},
                 {"checkpoint", ckpt.string()},
                 {"out", dist_report.string()}};
  cfg["saliency"] = {{"checkpoint", ckpt.string()},
                     {"registry", registry.string()},
                     {"manifest", (dataset / "manifest.jsonl").string()},
                     {"distortion", "gaussian_blur"},
                     {"limit", 3},
                     {"csv", true},
                     {"out", sal_dir.string()}};
  std::string cfg_path = (root / "config.json").string();
  {
    std::ofstream out(cfg_path);
    out << cfg.dump(2) << "\n";
  }

  std::string base = "--config " + cfg_path;
  bool ok = true;
  std::ostringstream detail;
  auto step = [&](const std::string& name, const std::string& args) {
    if (!ok) return;
    int rc = run_cli(cli, args);
    if (rc != 0) {
      ok = false;
      detail << name << " exited " << rc << "; ";
    }
  };
  step("generate", "generate " + base);
  step("build-registry", "build-registry " + base);
  step("train-dist", "train-dist " + base);
  step("extract", "extract " + base);
  step("train-reg", "train-reg " + base);
  step("eval-dist", "eval " + base);
  step("eval-score", "eval " + base + " --task score --probs " +
                         probs.string() + " --regressor " + reg_ckpt.string() +
                         " --scores " + scores.string() + " --out " +
                         score_report.string());
  step("saliency", "saliency " + base);

  if (ok) {
    // resolved-config snapshots exist alongside outputs
    ok = ok && fs::exists(dataset / "resolved_config.json") &&
         fs::exists(ckpt.string() + ".config.json") &&
         fs::exists(sal_dir / "resolved_config.json");
    if (!ok) detail << "missing resolved-config snapshot; ";
  }

  if (ok) {
    // digest binding is load-bearing: a stale probs digest must be refused
    CsvTable t = load_csv_table(probs.string(), kProbMatrixFormat);
    t.meta["registry_digest"] = "0123456789abcdef";
    fs::path tampered = root / "probs_tampered.csv";
    write_csv_table(t, tampered.string());
    int rc = run_cli(cli, "train-reg " + base + " --probs " +
                              tampered.string() + " --out " +
                              (root / "reg2.ckpt").string());
    if (rc == 0) {
      ok = false;
      detail << "tampered probs digest was accepted; ";
    } else {
      detail << "tampered digest refused; ";
    }
  }

  if (ok) {
    // saliency maps: dimensions and max-normalization on every image
    std::ifstream in(sal_dir / "saliency_report.json");
    nlohmann::json rep;
    in >> rep;
    std::size_t checked = 0;
    for (const auto& item : rep["items"]) {
      if (item["height"] != 32 || item["width"] != 32) ok = false;
      std::string rec = item["record"].get<std::string>();
      for (auto& ch : rec)
        if (ch == '#' || ch == '/' || ch == '\\') ch = '_';
      fs::path csv = sal_dir / (rec + "__gaussian_blur.csv");
      if (!fs::exists(csv)) {
        ok = false;
        continue;
      }
      std::ifstream c(csv);
      std::string line;
      double mx = 0.0;
      std::size_t rows = 0;
      while (std::getline(c, line)) {
        if (line.empty() || line[0] == '#') continue;
        ++rows;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ','))
          mx = std::max(mx, std::abs(std::stod(cell)));
      }
      if (rows != 32) ok = false;
      if (!(std::abs(mx - 1.0) <= 1e-9 || mx == 0.0)) ok = false;
      ++checked;
    }
    if (checked != 3) ok = false;
    detail << checked << " saliency maps checked";
  }
  return {ok, detail.str()};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::fprintf(stderr,
                 "usage: attriq_acceptance <attriq-cli-path> <repo-root>\n");
    return 2;
  }
  std::string cli = argv[1];
  std::string repo_root = argv[2];
  std::string attributes_path =
      (fs::path(repo_root) / "data" / "attributes_default.json").string();
  std::string workdir = "acceptance_work";
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  run_criterion(1, "math-core invariants", criterion1_math_core);
  run_criterion(2, "gradient suite", [&] {
    return criterion2_gradients(attributes_path);
  });
  run_criterion(3, "metric oracles", criterion3_metric_oracles);
  run_criterion(4, "generator statistics",
                [&] { return criterion4_generator(workdir); });

  DeskScale ds;
  ds.workdir = workdir;
  ds.attributes_path = attributes_path;
  run_criterion(5, "desk-scale distortion identification",
                [&] { return criterion5_distortion_id(ds); });
  run_criterion(6, "desk-scale quality regression",
                [&] { return criterion6_regression(ds); });
  run_criterion(7, "desk-scale zero-shot analogue",
                [&] { return criterion7_zero_shot(ds); });
  run_criterion(8, "pipeline integrity", [&] {
    return criterion8_pipeline(cli, repo_root, workdir);
  });

  std::size_t failed = 0;
  for (const auto& o : g_outcomes)
    if (!o.ok) ++failed;
  std::printf("acceptance: %zu/%zu criteria passed\n",
              g_outcomes.size() - failed, g_outcomes.size());
  return failed == 0 ? 0 : 1;
}
