#include "phyrec/optengine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

namespace phyrec {

double cosine_lr(long iter, long total, double lr0, double floor_fraction) {
  if (total <= 0) throw ContractError("cosine_lr: total must be positive");
  if (iter < 0 || iter > total)
    throw ContractError("cosine_lr: iter outside [0, total]");
  const double lr_floor = floor_fraction * lr0;
  const double phase = M_PI * double(iter) / double(total);
  return lr_floor + (lr0 - lr_floor) * 0.5 * (1.0 + std::cos(phase));
}

void AdamState::reset(Eigen::Index n) {
  m = VecX::Zero(n);
  v = VecX::Zero(n);
  step = 0;
}

void adam_step(AdamState& state, VecX& params, const VecX& grads, double lr,
               double beta1, double beta2, double eps) {
  if (params.size() != grads.size() || state.m.size() != params.size())
    throw ContractError("adam_step: dimension mismatch");
  if (!grads.allFinite()) throw NumericError("adam_step: non-finite gradient");
  ++state.step;
  state.m = beta1 * state.m + (1.0 - beta1) * grads;
  state.v = beta2 * state.v + (1.0 - beta2) * grads.cwiseProduct(grads);
  const double c1 = 1.0 - std::pow(beta1, double(state.step));
  const double c2 = 1.0 - std::pow(beta2, double(state.step));
  params.array() -=
      lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + eps);
}

const char* to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Sequential: return "sequential";
    case StrategyKind::FullJoint: return "fulljoint";
    case StrategyKind::Progressive: return "progressive";
  }
  return "?";
}

StrategyKind strategy_from_string(const std::string& s) {
  if (s == "sequential") return StrategyKind::Sequential;
  if (s == "fulljoint") return StrategyKind::FullJoint;
  if (s == "progressive") return StrategyKind::Progressive;
  throw ConfigError("unknown strategy: " + s);
}

namespace {

struct StageBudget {
  int s1, s2, s3;
  double lr_scale;
};

StageBudget budget_for(MaterialModel m) {
  switch (m) {
    case MaterialModel::Elastic: return {100, 100, 100, 1.0};
    case MaterialModel::Sand: return {100, 100, 150, 1.0};
    case MaterialModel::Newtonian: return {50, 50, 300, 1.0};
    case MaterialModel::NonNewtonian: return {50, 350, 50, 1.0};
    case MaterialModel::Plasticine: return {50, 300, 50, 0.5};
  }
  return {100, 100, 100, 1.0};
}

}  // namespace

StrategyPlan make_plan(StrategyKind kind, MaterialModel model) {
  const StageBudget b = budget_for(model);
  StrategyPlan plan;
  plan.name = kind;

  StageConfig s1;
  s1.active = ParamFlags{true, false, false, false};
  s1.frames = FrameWindow::FirstK;
  s1.iterations = b.s1;
  s1.lr_scale = b.lr_scale;

  StageConfig all_frames = s1;
  all_frames.frames = FrameWindow::All;

  switch (kind) {
    case StrategyKind::Progressive: {
      StageConfig s2 = all_frames;
      s2.active = ParamFlags{true, true, false, false};
      s2.iterations = b.s2;
      StageConfig s3 = all_frames;
      s3.active = ParamFlags{true, true, true, true};
      s3.iterations = b.s3;
      plan.stages = {s1, s2, s3};
      break;
    }
    case StrategyKind::Sequential: {
      // freeze-and-advance: v0 first, then material only, same total budget
      StageConfig s2 = all_frames;
      s2.active = ParamFlags{false, true, false, false};
      s2.iterations = b.s2 + b.s3;
      plan.stages = {s1, s2};
      break;
    }
    case StrategyKind::FullJoint: {
      StageConfig s = all_frames;
      s.active = ParamFlags{true, true, true, true};
      s.iterations = b.s1 + b.s2 + b.s3;
      plan.stages = {s};
      break;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Stage objective
// ---------------------------------------------------------------------------

namespace {

class StageLoss final : public TrajectoryLoss {
 public:
  StageLoss(const FitProblem& p, std::size_t last_frame)
      : p_(p), last_(last_frame) {}

  double evaluate(std::size_t frame, const ParticleSet& snap,
                  FrameAdjoint& adj) override {
    if (frame == 0 || frame > last_) return 0.0;
    const LossWeights& w = p_.weights;
    double total = 0.0;
    if (!p_.cameras.empty() && frame < p_.observations.alpha.size()) {
      double li = 0.0;
      for (std::size_t c = 0; c < p_.cameras.size(); ++c) {
        const AlphaImage img = render_alpha(snap, p_.cameras[c]);
        const AlphaImage& obs = p_.observations.alpha[frame][c];
        li += image_loss(img, obs, w);
        AlphaImage a_bar(img.width, img.height);
        image_loss_vjp(img, obs, w, w.lambda_img, a_bar);
        render_alpha_vjp(snap, p_.cameras[c], a_bar, adj.x_bar, adj.radii_bar,
                         adj.opacity_bar);
      }
      l_img += li;
      total += w.lambda_img * li;
    }
    if (frame < p_.targets.size() && !p_.targets[frame].empty()) {
      const double cd = chamfer(snap.positions, p_.targets[frame]);
      chamfer_vjp(snap.positions, p_.targets[frame], w.lambda_cd, adj.x_bar);
      l_cd += cd;
      total += w.lambda_cd * cd;
    }
    return total;
  }

  double l_img = 0;
  double l_cd = 0;

 private:
  const FitProblem& p_;
  std::size_t last_;
};

// Keep updated parameters in the stable regime: material raw coordinates in
// log10 [1, 7] / sigmoid [-12, 12], positions inside the grid margin,
// positive radii, opacities in (0, 1].
constexpr double kLogLo = 1.0, kLogHi = 7.0;
constexpr double kRawLo = -12.0, kRawHi = 12.0;

void clamp_material_raw(MaterialModel model, VecX& raw) {
  const std::vector<std::string> names = raw_names(model);
  for (Eigen::Index i = 0; i < raw.size(); ++i) {
    if (names[i].rfind("log10_", 0) == 0)
      raw[i] = std::clamp(raw[i], kLogLo, kLogHi);
    else
      raw[i] = std::clamp(raw[i], kRawLo, kRawHi);
  }
}

struct UpdateSnapshot {
  FitState state;
  OptimStates opt;
  ParamGradients grads;
  double lr_factor = 0;
};

void apply_updates(FitState& st, OptimStates& opt, const ParamGradients& g,
                   const ParamFlags& flags, const LearningRates& lr, double f,
                   double spacing) {
  if (flags.v0) {
    VecX p = st.v0;
    VecX gr = g.d_v0;
    adam_step(opt.v0, p, gr, lr.v0 * f);
    st.v0 = p;
  }
  if (flags.material) {
    VecX raw = params_to_raw(st.material);
    adam_step(opt.material, raw, g.d_material, lr.material * f);
    clamp_material_raw(st.material.model, raw);
    st.material = apply_raw(st.material, raw);
  }
  const std::size_t n = st.particles.size();
  if (flags.x0) {
    VecX p(3 * n), gr(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
      p.segment<3>(3 * i) = st.particles.positions[i];
      gr.segment<3>(3 * i) = g.d_x0[i];
    }
    adam_step(opt.x0, p, gr, lr.x0 * f);
    const double lo = 2.0 * spacing, hi = 1.0 - 2.0 * spacing;
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        st.particles.positions[i][c] = std::clamp(p[3 * i + c], lo, hi);
  }
  if (flags.appearance) {
    VecX p(2 * n), gr(2 * n);
    for (std::size_t i = 0; i < n; ++i) {
      p[i] = st.particles.radii[i];
      p[n + i] = st.particles.opacities[i];
      gr[i] = g.d_radii[i];
      gr[n + i] = g.d_opacities[i];
    }
    adam_step(opt.appearance, p, gr, lr.appearance * f);
    for (std::size_t i = 0; i < n; ++i) {
      st.particles.radii[i] = std::max(p[i], 1e-4);
      st.particles.opacities[i] = std::clamp(p[n + i], 1e-4, 1.0);
    }
  }
}

}  // namespace

StageResult run_stage(const FitProblem& problem, const StageConfig& stage,
                      int stage_index, FitState& state, OptimStates* opt) {
  if (stage.iterations <= 0)
    throw ContractError("run_stage: iterations must be positive");
  const ParamFlags& flags = stage.active;
  if (!(flags.v0 || flags.material || flags.x0 || flags.appearance))
    throw ContractError("run_stage: no active parameter group");
  const std::size_t frames = problem.observations.frame_count();
  if (frames < 2) throw ContractError("run_stage: need at least two frames");

  std::size_t last = frames - 1;
  if (stage.frames == FrameWindow::FirstK) {
    if (stage.first_k < 1 || std::size_t(stage.first_k) > last)
      throw ContractError("run_stage: FirstK window outside [1, frames-1]");
    last = std::size_t(stage.first_k);
  }
  const std::vector<double> ts(problem.observations.timestamps.begin(),
                               problem.observations.timestamps.begin() +
                                   long(last) + 1);

  OptimStates local;
  if (!opt) opt = &local;
  const std::size_t n = state.particles.size();
  const int rawd = raw_dim(state.material.model);
  auto ensure = [&](AdamState& a, Eigen::Index dim) {
    if (problem.reset_optimizer_per_stage || a.m.size() != dim) a.reset(dim);
  };
  if (flags.v0) ensure(opt->v0, 3);
  if (flags.material) ensure(opt->material, rawd);
  if (flags.x0) ensure(opt->x0, Eigen::Index(3 * n));
  if (flags.appearance) ensure(opt->appearance, Eigen::Index(2 * n));

  StageResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  FitState best = state;

  UpdateSnapshot prev;
  bool have_prev = false;
  bool retried = false;
  int iter = 0;
  while (iter < stage.iterations) {
    Scene scene = problem.scene;
    scene.particles = state.particles;

    GradResult g;
    StageLoss loss(problem, last);
    try {
      const SimSchedule sched = make_schedule(scene, state.material, ts);
      g = grad(scene, state.material, state.v0, loss, sched, flags,
               problem.memory_budget);
    } catch (const std::runtime_error&) {
      // unstable evaluation: retry the previous step at half size, once
      if (!have_prev || retried) {
        result.diverged = true;
        break;
      }
      state = prev.state;
      *opt = prev.opt;
      apply_updates(state, *opt, prev.grads, flags, stage.lr,
                    0.5 * prev.lr_factor, problem.scene.spacing());
      retried = true;
      continue;
    }

    TraceRow row;
    row.stage = stage_index;
    row.iter = iter;
    row.total = g.loss;
    row.l_img = problem.weights.lambda_img * loss.l_img;
    row.l_cd = problem.weights.lambda_cd * loss.l_cd;
    row.lr_factor =
        cosine_lr(iter, stage.iterations, stage.lr_scale, stage.floor_fraction);
    row.v0 = state.v0;
    row.raw_material = params_to_raw(state.material);
    if (!problem.x0_reference.empty())
      row.x0_err = chamfer(state.particles.positions, problem.x0_reference);
    result.trace.push_back(row);

    if (g.loss < result.best_loss) {
      result.best_loss = g.loss;
      result.best_iter = iter;
      best = state;
    }

    prev = UpdateSnapshot{state, *opt, g.grads, row.lr_factor};
    have_prev = true;
    retried = false;
    apply_updates(state, *opt, g.grads, flags, stage.lr, row.lr_factor,
                  problem.scene.spacing());
    ++iter;
  }

  if (result.best_iter >= 0) state = best;
  return result;
}

FitResult run_strategy(const FitProblem& problem, const StrategyPlan& plan) {
  FitResult r;
  r.state.v0 = problem.scene.v0;
  r.state.material = problem.scene.material;
  r.state.particles = problem.scene.particles;

  const auto t0 = std::chrono::steady_clock::now();
  OptimStates opt;
  for (std::size_t i = 0; i < plan.stages.size(); ++i) {
    StageResult sr = run_stage(problem, plan.stages[i], int(i) + 1, r.state,
                               &opt);
    const bool diverged = sr.diverged;
    r.stages.push_back(std::move(sr));
    if (diverged) {
      r.diverged = true;
      break;
    }
  }
  r.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return r;
}

}  // namespace phyrec
