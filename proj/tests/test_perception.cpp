#include <catch2/catch_amalgamated.hpp>

#include "test_util.hpp"

using namespace cdrest;
using namespace cdrest::testutil;

namespace {

std::vector<TaskConfig> catalog_tasks() {
  static const Catalog cat = enumerate_configs(default_catalog());
  return cat.perception_tasks();
}

}  // namespace

TEST_CASE("prediction head: shape, degenerate bias case, input gradient") {
  Rng rng(1);
  // output width 9 for d = 512
  {
    PerceptionHead<double> head(512, rng);
    Var<double> f = dleaf({2, 512}, rng);
    REQUIRE(head(f).shape() == std::vector<idx>({2, 9}));
  }
  // zero parameters except the final bias -> z = b for any input
  {
    PerceptionHead<double> head(16, rng);
    auto zero = [](Var<double>& v) { v.val_mut().fill(0.0); };
    zero(head.fc1.w);
    zero(head.fc1.b);
    zero(head.fc2.w);
    for (idx i = 0; i < 9; ++i) head.fc2.b.val_mut()[i] = 0.1 * double(i) - 0.3;
    Var<double> f = dleaf({3, 16}, rng, 2.0);
    Var<double> z = head(f);
    for (idx n = 0; n < 3; ++n)
      for (idx i = 0; i < 9; ++i)
        REQUIRE(z.val()[n * 9 + i] == Catch::Approx(head.fc2.b.val()[i]).margin(1e-12));
  }
  // finite differences of each z_j w.r.t. f_i, central step 1e-3, rtol 1e-4
  {
    PerceptionHead<double> head(8, rng);
    Var<double> f = dleaf({1, 8}, rng);
    for (idx j = 0; j < 9; ++j) {
      f.zero_grad();
      head.ln.gamma.zero_grad();
      head.ln.beta.zero_grad();
      Var<double> zj = slice(head(f), 1, j, 1);
      backward(reshape(zj, {1}));
      for (idx i = 0; i < 8; ++i) {
        const double save = f.val_mut()[i];
        double lp, lm;
        {
          NoGrad ng;
          f.val_mut()[i] = save + 1e-3;
          lp = head(f).val()[j];
          f.val_mut()[i] = save - 1e-3;
          lm = head(f).val()[j];
        }
        f.val_mut()[i] = save;
        const double fd = (lp - lm) / 2e-3;
        const double an = f.grad()[i];
        REQUIRE(std::abs(fd - an) <= 1e-4 * std::max({1.0, std::abs(fd), std::abs(an)}));
      }
    }
  }
}

TEST_CASE("threshold_mask: sign test with inclusive boundary") {
  Tensor<double> z = Tensor<double>::from({9}, {0.3, -0.2, 5, -5, 0, -0.1, 0.1, -3, 2.0});
  REQUIRE(threshold_mask(z).to_string() == "10101010");
  Tensor<double> neg = Tensor<double>::from({9}, {-1, -2, -3, -4, -5, -6, -7, -8, 1});
  REQUIRE(threshold_mask(neg).popcount() == 0);
  // 1(sigmoid(z) >= 0.5) == 1(z >= 0) against a direct sigmoid evaluation
  Rng rng(2);
  for (int k = 0; k < 1000; ++k) {
    const double zv = rng.uniform(-6, 6);
    const bool via_sigmoid = 1.0 / (1.0 + std::exp(-zv)) >= 0.5;
    REQUIRE(via_sigmoid == (zv >= 0.0));
  }
}

TEST_CASE("label similarity matrix: fixtures and brute-force oracle") {
  const auto tasks = catalog_tasks();
  const Tensor<double> T = labels_tensor<double>(tasks);
  const Tensor<double> S = label_similarity(T);
  const idx K = T.dim(0);
  REQUIRE(K == 22);
  for (idx i = 0; i < K; ++i) REQUIRE(S[i * K + i] == Catch::Approx(1.0).margin(1e-12));
  // rain+haze vs rain -> 1/sqrt(2)
  idx i_rh = -1, i_r = -1;
  for (idx k = 0; k < K; ++k) {
    if (tasks[std::size_t(k)].name == "rain+haze") i_rh = k;
    if (tasks[std::size_t(k)].name == "rain") i_r = k;
  }
  REQUIRE(S[i_rh * K + i_r] == Catch::Approx(1.0 / std::sqrt(2.0)).margin(1e-12));
  // entrywise double-loop oracle
  for (idx i = 0; i < K; ++i)
    for (idx j = 0; j < K; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (idx c = 0; c < 9; ++c) {
        dot += T[i * 9 + c] * T[j * 9 + c];
        ni += T[i * 9 + c] * T[i * 9 + c];
        nj += T[j * 9 + c] * T[j * 9 + c];
      }
      REQUIRE(S[i * K + j] == Catch::Approx(dot / std::sqrt(ni * nj)).margin(1e-12));
      REQUIRE(S[i * K + j] == Catch::Approx(S[j * K + i]).margin(1e-12));
      REQUIRE(S[i * K + j] >= 0.0);
      REQUIRE(S[i * K + j] <= 1.0 + 1e-12);
    }
  // zero-norm row rejected
  Tensor<double> bad = Tensor<double>::zeros({2, 9});
  bad[0] = 1;
  REQUIRE_THROWS(label_similarity(bad));
}

TEST_CASE("soft targets: softmax(2I) fixture, symmetry, row sums") {
  Tensor<double> I2 = Tensor<double>::zeros({2, 2});
  I2[0] = I2[3] = 1.0;
  auto [Qit, Qti] = soft_targets(I2, 2.0);
  const double e2 = std::exp(2.0);
  REQUIRE(Qit[0] == Catch::Approx(e2 / (e2 + 1)).margin(1e-12));  // 0.8808
  REQUIRE(Qit[1] == Catch::Approx(1.0 / (e2 + 1)).margin(1e-12)); // 0.1192
  REQUIRE(Qit[0] == Catch::Approx(0.8808).margin(1e-4));
  REQUIRE(Qit[1] == Catch::Approx(0.1192).margin(1e-4));

  Rng rng(3);
  Tensor<double> S = Tensor<double>::rand_uniform({5, 5}, rng);
  for (idx i = 0; i < 5; ++i)
    for (idx j = 0; j < i; ++j) S[i * 5 + j] = S[j * 5 + i];  // symmetrize
  auto [A, B] = soft_targets(S, 2.0);
  for (idx i = 0; i < 25; ++i) REQUIRE(A[i] == Catch::Approx(B[i]).margin(1e-12));
  Tensor<double> R = Tensor<double>::rand_uniform({6, 6}, rng);
  auto [Qr, Qr2] = soft_targets(R, 2.0);
  for (idx i = 0; i < 6; ++i) {
    double s = 0;
    for (idx j = 0; j < 6; ++j) s += Qr[i * 6 + j];
    REQUIRE(s == Catch::Approx(1.0).margin(1e-6));
  }
  // monotonicity: S_ij > S_ik => Q[i,j] > Q[i,k] on the catalog similarity
  const Tensor<double> T = labels_tensor<double>(catalog_tasks());
  const Tensor<double> Sc = label_similarity(T);
  auto [Q, Qt] = soft_targets(Sc, 2.0);
  const idx K = Sc.dim(0);
  for (idx i = 0; i < K; ++i)
    for (idx j = 0; j < K; ++j)
      for (idx k = 0; k < K; ++k)
        if (Sc[i * K + j] > Sc[i * K + k] + 1e-12)
          REQUIRE(Q[i * K + j] > Q[i * K + k]);
}

TEST_CASE("alignment loss: zero at matched targets, nonnegative, gradients") {
  // Gram(F) = S when F rows are the normalized label vectors; with
  // alpha = 1/tau the softmax targets coincide and the loss vanishes.
  const auto tasks = catalog_tasks();
  Tensor<double> T = labels_tensor<double>(tasks);
  const Tensor<double> S = label_similarity(T);
  AlignmentOptions opt;
  opt.alpha = 1.0 / opt.tau;
  Var<double> F = constant(T.clone());
  Var<double> loss = alignment_loss(F, F, S, opt);
  REQUIRE(loss.val()[0] == Catch::Approx(0.0).margin(1e-10));

  // nonnegativity on random instances
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    Var<double> Fi = constant(Tensor<double>::randn({6, 8}, rng));
    Var<double> Ft = constant(Tensor<double>::randn({6, 8}, rng));
    Tensor<double> lbl = Tensor<double>::zeros({6, 9});
    for (idx i = 0; i < 6; ++i) lbl[i * 9 + idx(rng.uniform_int(9))] = 1;
    const Tensor<double> Sr = label_similarity(lbl);
    REQUIRE(alignment_loss(Fi, Ft, Sr, {}).val()[0] >= -1e-12);
  }

  // analytic vs central differences, K = 4, d = 8, both KL directions
  Var<double> Fi = dleaf({4, 8}, rng);
  Var<double> Ft = dleaf({4, 8}, rng);
  Tensor<double> lbl = Tensor<double>::zeros({4, 9});
  lbl[0 * 9 + 0] = 1;
  lbl[1 * 9 + 0] = 1;
  lbl[1 * 9 + 2] = 1;
  lbl[2 * 9 + 5] = 1;
  lbl[3 * 9 + 8] = 1;
  const Tensor<double> S4 = label_similarity(lbl);
  gradcheck({Fi, Ft}, [&] { return alignment_loss(Fi, Ft, S4, {}); }, 1e-3);
  AlignmentOptions swapped;
  swapped.kl_swapped = true;
  gradcheck({Fi, Ft}, [&] { return alignment_loss(Fi, Ft, S4, swapped); }, 1e-3);
}

TEST_CASE("alignment loss is permutation equivariant") {
  Rng rng(5);
  const idx K = 6, d = 8;
  Tensor<double> Fi = Tensor<double>::randn({K, d}, rng);
  Tensor<double> Ft = Tensor<double>::randn({K, d}, rng);
  Tensor<double> lbl = Tensor<double>::zeros({K, 9});
  for (idx i = 0; i < K; ++i) {
    lbl[i * 9 + idx(rng.uniform_int(8))] = 1;
    lbl[i * 9 + idx(rng.uniform_int(8))] = 1;
  }
  const Tensor<double> S = label_similarity(lbl);
  const double base = alignment_loss(constant(Fi.clone()), constant(Ft.clone()), S, {}).val()[0];

  std::vector<idx> perm = {3, 0, 5, 1, 4, 2};
  Tensor<double> Fip = Tensor<double>::zeros({K, d}), Ftp = Tensor<double>::zeros({K, d});
  Tensor<double> Sp = Tensor<double>::zeros({K, K});
  for (idx i = 0; i < K; ++i) {
    for (idx c = 0; c < d; ++c) {
      Fip[i * d + c] = Fi[perm[std::size_t(i)] * d + c];
      Ftp[i * d + c] = Ft[perm[std::size_t(i)] * d + c];
    }
    for (idx j = 0; j < K; ++j)
      Sp[i * K + j] = S[perm[std::size_t(i)] * K + perm[std::size_t(j)]];
  }
  const double permuted =
      alignment_loss(constant(Fip.clone()), constant(Ftp.clone()), Sp, {}).val()[0];
  REQUIRE(permuted == Catch::Approx(base).margin(1e-12));
}

TEST_CASE("perception loss: vanishing case, weight zeroing, recombination") {
  const auto tasks = catalog_tasks();
  Tensor<double> T = labels_tensor<double>(tasks);
  const Tensor<double> S = label_similarity(T);
  const idx K = T.dim(0);

  // perfect logits (+-20) and P = Q -> loss < 1e-6
  Tensor<double> logits = Tensor<double>::uninit({K, 9});
  for (idx i = 0; i < K * 9; ++i) logits[i] = T[i] > 0.5 ? 20.0 : -20.0;
  AlignmentOptions opt;
  opt.alpha = 1.0 / opt.tau;
  Var<double> F = constant(T.clone());
  Var<double> total =
      perception_loss(constant(logits.clone()), T, F, F, S, PerceptionLossWeights{}, opt);
  REQUIRE(total.val()[0] < 1e-6);

  // lambda_align = 0 reduces to 0.9 * BCE
  Rng rng(6);
  Var<double> z = dleaf({K, 9}, rng);
  Var<double> Fi = dleaf({K, 8}, rng);
  Var<double> Ft = constant(Tensor<double>::randn({K, 8}, rng));
  PerceptionLossWeights w0;
  w0.lambda_align = 0;
  Var<double> reduced = perception_loss(z, T, Fi, Ft, S, w0);
  Var<double> bce = bce_logits_mean(z, T.clone());
  REQUIRE(reduced.val()[0] == Catch::Approx(0.9 * bce.val()[0]).margin(1e-12));

  // weighted sum equals the manual combination of separately computed terms
  PerceptionLossWeights w;
  Var<double> combo = perception_loss(z, T, Fi, Ft, S, w);
  const double manual =
      w.lambda_align * alignment_loss(Fi, Ft, S, {}).val()[0] + w.lambda_cls * bce.val()[0];
  REQUIRE(combo.val()[0] == Catch::Approx(manual).margin(1e-10));

  // full-loss gradient check (Eq. 7 path)
  gradcheck({z, Fi}, [&] { return perception_loss(z, T, Fi, Ft, S, w); }, 1e-3);
}

TEST_CASE("stage-1 training: frozen text, mask consistency, loss decreases") {
  const Catalog cat = enumerate_configs(default_catalog());
  const auto tasks = cat.perception_tasks();
  PerceptionModel<float> model(BackendKind::Tiny, 64, tasks, 7);
  REQUIRE(model.prompts()[0] == task_prompt(tasks[0]));
  REQUIRE(model.text_embeddings().shape() == std::vector<idx>({22, 64}));

  std::vector<SceneViews<float>> data;
  for (int s = 0; s < 3; ++s) {
    const std::string id = str("t", s);
    data.push_back(make_scene_views<float>(id, generate_scene(id, 5, 48, 48), cat, tasks, 32, 9));
  }
  const Tensor<float> text_before = model.text_embeddings().clone();
  Stage1Config cfg;
  cfg.epochs = 3;
  cfg.lr = 1e-3;
  cfg.seed = 1;
  const auto losses = train_stage1(model, data, cfg);
  REQUIRE(losses.size() == 3);
  REQUIRE(losses.back() < losses.front());
  for (idx i = 0; i < text_before.numel(); ++i)
    REQUIRE(model.text_embeddings()[i] == text_before[i]);

  // mask/logit consistency of infer
  const auto out = model.infer(data[0].views[3]);
  REQUIRE(out.mask == threshold_mask(out.logits));
  REQUIRE(out.embedding.numel() == 64);
  // deterministic inference
  const auto out2 = model.infer(data[0].views[3]);
  for (idx i = 0; i < 9; ++i) REQUIRE(out.logits[i] == out2.logits[i]);

  // vlm backend is a guarded stub without weights
  REQUIRE_THROWS_WITH(PerceptionModel<float>(BackendKind::Vlm, 512, tasks, 0),
                      Catch::Matchers::ContainsSubstring("vlm backend"));
}
