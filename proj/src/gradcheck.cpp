#include "sailpiw/gradcheck.hpp"

#include "sailpiw/cluster.hpp"
#include "sailpiw/common.hpp"
#include "sailpiw/distill.hpp"
#include "sailpiw/piw.hpp"
#include "sailpiw/trainer.hpp"

namespace sailpiw {

namespace {

Records random_block(std::size_t n, std::size_t users, std::size_t items, std::int64_t t0, Rng& rng) {
  std::uniform_int_distribution<std::int64_t> u(0, static_cast<std::int64_t>(users) - 1);
  std::uniform_int_distribution<std::int64_t> i(0, static_cast<std::int64_t>(items) - 1);
  Records r;
  for (std::size_t k = 0; k < n; ++k) r.push_back({u(rng), i(rng), t0 + static_cast<std::int64_t>(k), std::nullopt});
  return r;
}

// Teacher on block t-1 and a perturbed, grown student on block t.
struct Instance {
  GraphBundle prev_graph, graph;
  ModelState state;
  TeacherSnapshot teacher;
  CandidateSets cands;
  NeighborOrder order;
  std::vector<BprTriple> batch;
  Matrix target_p;

  Instance(const GradSuiteOptions& o, std::uint64_t seed) {
    Rng rng(derive_seed(seed, {1}));
    const std::size_t prev_users = o.users * 3 / 4, prev_items = o.items * 3 / 4;
    prev_graph = build_graphs(random_block(5 * o.users, prev_users, prev_items, 0, rng), nullptr, 3);
    graph = build_graphs(random_block(4 * o.users, o.users, o.items, 100000, rng), &prev_graph, 3);
    ModelDims dims{o.d, o.layers, o.clusters, 4, o.clusters};
    const ModelState prev = init_model(dims, prev_graph.n_users(), prev_graph.n_items(), {0.3, derive_seed(seed, {2})});
    state = prev;
    grow_tables(state, graph.n_users(), graph.n_items(), 0.3, derive_seed(seed, {3}));
    std::normal_distribution<double> n(0.0, 0.05);
    for (auto* m : {&state.user_emb, &state.item_emb})
      for (double& v : m->flat()) v += n(rng);
    for (auto& w : state.cluster_transforms)
      for (double& v : w.flat()) v += n(rng);
    for (auto* m : {&state.wg_w1, &state.wg_w2})
      for (double& v : m->flat()) v += 0.5 * n(rng);
    // Keep the generator's hidden units off the ReLU kink while s is small.
    for (double& v : state.wg_b1.flat()) v = 0.2;
    teacher = make_teacher(prev, prev_graph, 3, derive_seed(seed, {4}));
    state.cluster_centers = init_centers(teacher.layers.final_item(), o.clusters, derive_seed(seed, {5}));
    for (double& v : state.cluster_centers.flat()) v += 0.5 * n(rng);
    cands = sample_candidate_sets(prev_graph, 4, derive_seed(seed, {6}), true);
    order = order_neighbors(prev_graph, teacher.layers.final_user(), teacher.layers.final_item(), o.clusters);
    batch = sample_bpr_batch(graph, 32, derive_seed(seed, {7}));
    target_p = target_distribution(soft_assign(forward_values(state, graph).final_item(), state.cluster_centers, 1.0));
  }
};

DistillSpec spec_for(Strategy s, std::size_t clusters) {
  DistillSpec spec;
  spec.strategy = s;
  spec.clusters = clusters;
  spec.neighbor_len = clusters;
  spec.n_neg = 4;
  spec.anchors = 3;
  return spec;
}

// Loss over the tape built by `body`, with gradients collected when asked.
template <class Body>
LossFn tape_loss(Body body) {
  return [body](const ModelState& st, GradientBuffer* grads) {
    ad::Tape tape;
    const BoundState bound = bind_state(tape, st);
    const ad::Var loss = body(tape, bound);
    if (grads) {
      tape.backward(loss);
      *grads = collect_gradients(tape, bound, st);
    }
    return loss.scalar();
  };
}

LossFn step_path(const Instance& in, const DistillSpec& spec, bool with_teacher) {
  return [&in, spec, with_teacher](const ModelState& st, GradientBuffer* grads) {
    StepContext ctx;
    ctx.graph = &in.graph;
    ctx.teacher = with_teacher ? &in.teacher : nullptr;
    ctx.cands = &in.cands;
    ctx.target_p = &in.target_p;
    ctx.order = &in.order;
    ctx.spec = spec;
    ctx.l2 = 1e-3;
    ctx.dropout = 0.0;
    return step_loss(st, ctx, in.batch, 0, grads).total;
  };
}

LossFn piw_distill_path(const Instance& in, const DistillSpec& spec, bool user_only) {
  return tape_loss([&in, spec, user_only](ad::Tape& tape, const BoundState& bound) {
    const LayerVars student = forward_embeddings(tape, bound, in.graph, 0.0, 0);
    const DistillBatch db = warm_nodes(in.batch, in.teacher);
    const auto w = piw_weights(spec, bound, student, in.teacher, db.users, &in.order);
    const DistillTerms d = distill_loss(spec, student, in.teacher, db, in.cands, w->w);
    return user_only ? d.user : ad::add(d.user, d.item);
  });
}

LossFn cluster_kl_path(const Instance& in) {
  return tape_loss([&in](ad::Tape& tape, const BoundState& bound) {
    const LayerVars student = forward_embeddings(tape, bound, in.graph, 0.0, 0);
    return clustering_kl_loss(soft_assign(student.item.back(), bound.cluster_centers, 1.0), in.target_p);
  });
}

}  // namespace

std::vector<GradSuiteEntry> gradient_suite(const std::vector<std::uint64_t>& seeds, const GradSuiteOptions& opts) {
  std::vector<GradSuiteEntry> out;
  for (std::uint64_t seed : seeds) {
    const Instance in(opts, seed);
    const DistillSpec none = spec_for(Strategy::kNone, opts.clusters);
    const std::vector<std::pair<std::string, LossFn>> paths = {
        {"bpr_l2", step_path(in, none, false)},
        {"cluster_kl", cluster_kl_path(in)},
        {"graphsail_piw", piw_distill_path(in, spec_for(Strategy::kGraphSail, opts.clusters), false)},
        {"sgct_piw", piw_distill_path(in, spec_for(Strategy::kSgct, opts.clusters), false)},
        {"lwckd_piw", piw_distill_path(in, spec_for(Strategy::kLwcKd, opts.clusters), false)},
        {"weight_generator", piw_distill_path(in, spec_for(Strategy::kLwcKd, opts.clusters), true)},
        {"total", step_path(in, spec_for(Strategy::kLwcKd, opts.clusters), true)},
    };
    for (const auto& [name, loss] : paths)
      out.push_back({name, seed,
                     check_gradients(loss, in.state, opts.probes_per_block, derive_seed(seed, {8}), opts.step)});
  }
  return out;
}

}  // namespace sailpiw
