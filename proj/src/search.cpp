#include "tof/search.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

#include "tof/errors.hpp"
#include "tof/seed.hpp"

namespace tof {

int branch_factor(int t, const Schedule& schedule) {
  const bool branching = std::find(schedule.branch_at.begin(), schedule.branch_at.end(), t) != schedule.branch_at.end();
  return branching ? schedule.branch_limit : 1;
}

std::vector<std::int64_t> survivor_counts(const Schedule& schedule) {
  std::vector<std::int64_t> k;
  if (schedule.depth <= 0) return k;
  k.reserve(static_cast<std::size_t>(schedule.depth));
  k.push_back(schedule.roots);
  for (int t = 1; t < schedule.depth; ++t) {
    const std::int64_t produced = k.back() * branch_factor(t, schedule);
    switch (schedule.prune_rule) {
      case PruneRule::halve:
        k.push_back(std::max<std::int64_t>(1, (produced + 1) / 2));
        break;
      case PruneRule::fixed_k: {
        const auto idx = static_cast<std::size_t>(t - 1);
        if (idx >= schedule.fixed_k.size() || schedule.fixed_k[idx] <= 0) {
          throw ConfigError("fixed_k: k_" + std::to_string(t) + " must be >= 1");
        }
        k.push_back(std::min<std::int64_t>(schedule.fixed_k[idx], produced));
        break;
      }
      case PruneRule::none:
        k.push_back(produced);
        break;
    }
  }
  return k;
}

bool frontier_before(const CandidateNode& a, const CandidateNode& b) {
  if (a.total_score != b.total_score) return a.total_score > b.total_score;
  return a.node_id < b.node_id;
}

PruneOutcome prune_top_k(std::vector<CandidateNode> produced, std::int64_t k, int level) {
  if (k < 1) throw ConfigError("pruning size k must be >= 1");
  if (produced.empty()) throw RunError("pruning an empty level (gate safety violated)");
  PruneOutcome out;
  out.level = level;
  out.k_in = static_cast<std::int64_t>(produced.size());
  std::sort(produced.begin(), produced.end(), frontier_before);
  const auto keep = static_cast<std::size_t>(std::min<std::int64_t>(k, out.k_in));
  out.retained.assign(produced.begin(), produced.begin() + static_cast<std::ptrdiff_t>(keep));
  out.discarded.assign(produced.begin() + static_cast<std::ptrdiff_t>(keep), produced.end());
  out.k_out = static_cast<std::int64_t>(keep);
  return out;
}

FrontierQueue::FrontierQueue(std::vector<CandidateNode> nodes) : nodes_(std::move(nodes)) {
  std::sort(nodes_.begin(), nodes_.end(), frontier_before);
}

void FrontierQueue::push(CandidateNode node) {
  auto pos = std::upper_bound(nodes_.begin(), nodes_.end(), node, frontier_before);
  nodes_.insert(pos, std::move(node));
}

CandidateNode FrontierQueue::dequeue() {
  if (nodes_.empty()) throw RunError("dequeue from an empty frontier");
  CandidateNode front = std::move(nodes_.front());
  nodes_.erase(nodes_.begin());
  return front;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, threads)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto drain = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  pool.clear();
  if (first_error) std::rethrow_exception(first_error);
}

namespace {

/// Shared state of one search run.
class Run {
 public:
  Run(const RunConfig& config, Generator& generator, const Ensemble& ensemble, const SearchOptions& options)
      : config_(require_valid(config)),
        schedule_(config_.schedule),
        generator_(generator),
        ensemble_(ensemble),
        options_(options) {
    if (ensemble_.size() == 0) throw ConfigError("verifier ensemble is empty");
    if (options_.decomposer != nullptr) {
      prompts_ = options_.decomposer->decompose(config_.prompt);
    } else {
      prompts_ = decompose_prompt(config_.prompt);
    }
    for (int t = 0; t < schedule_.depth; ++t) stages_.push_back(stage_of_frame(t, schedule_));
    result_.nondeterministic_backends = !generator_.capabilities().deterministic || !ensemble_.deterministic();
  }

  StagePrompt routed(int t) const { return prompts_.routed(stages_[static_cast<std::size_t>(t)]); }

  NodeId reserve_ids(std::size_t count) {
    const NodeId first = static_cast<NodeId>(forest_.size());
    forest_.resize(forest_.size() + count);
    return first;
  }

  CandidateNode& node(NodeId id) { return forest_.at(static_cast<std::size_t>(id)); }

  std::vector<LatentRef> chain_latents(NodeId leaf) const {
    std::vector<LatentRef> out;
    std::optional<NodeId> cur = leaf;
    while (cur) {
      const auto& n = forest_.at(static_cast<std::size_t>(*cur));
      out.push_back(n.latent);
      cur = n.parent_id;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  SearchPath path_to(NodeId leaf) const {
    SearchPath p;
    std::optional<NodeId> cur = leaf;
    while (cur) {
      const auto& n = forest_.at(static_cast<std::size_t>(*cur));
      p.nodes.push_back(n);
      cur = n.parent_id;
    }
    std::reverse(p.nodes.begin(), p.nodes.end());
    return p;
  }

  Artifact preview(std::vector<LatentRef> frames) {
    Artifact a = generator_.decode(frames);
    a.stages.assign(stages_.begin(), stages_.begin() + static_cast<std::ptrdiff_t>(frames.size()));
    return a;
  }

  void record(const std::vector<CostEvent>& costs) { result_.ledger.append(costs); }

  static std::int64_t steps_of(const std::vector<CostEvent>& costs) {
    std::int64_t s = 0;
    for (const auto& c : costs) {
      if (c.kind == CostKind::generate) s += c.steps;
    }
    return s;
  }

  static std::int64_t nfe_of(const std::vector<CostEvent>& costs) {
    std::int64_t s = 0;
    for (const auto& c : costs) s += c.nfe();
    return s;
  }

  void node_event(const CandidateNode& n, const char* status, const std::vector<CostEvent>& costs,
                  const nlohmann::json& gates = nullptr) {
    nlohmann::json e = {
        {"event", "node"},
        {"node_id", n.node_id},
        {"parent_id", n.parent_id ? nlohmann::json(*n.parent_id) : nlohmann::json(nullptr)},
        {"t", n.frame_index},
        {"stage", to_string(n.stage)},
        {"seed", n.seed},
        {"h", n.local_reward},
        {"s", n.total_score},
        {"status", status},
        {"gates", gates},
        {"cost", {{"steps", steps_of(costs)}, {"nfe", nfe_of(costs)}}},
    };
    result_.events.push_back(std::move(e));
  }

  void fault_event(NodeId id, const std::string& what) {
    ++result_.faults;
    result_.events.push_back({{"event", "fault"}, {"node_id", id}, {"message", what}});
  }

  /// Re-verifies complete paths ending at `leaves` with the final-stage prompt
  /// and selects by rank fusion.
  void select_final(const std::vector<NodeId>& leaves) {
    if (leaves.empty()) throw RunError("no complete candidate path survived");
    const StagePrompt final_prompt = prompts_.routed(Stage::final);
    std::vector<std::vector<VerifierScore>> scores(leaves.size());
    parallel_for(leaves.size(), options_.threads, [&](std::size_t i) {
      const SearchPath path = path_to(leaves[i]);
      const Artifact artifact = decode_path(generator_, path, schedule_);
      for (const auto& m : ensemble_.members()) {
        scores[i].push_back(score_candidate(*m.verifier, leaves[i], artifact, final_prompt, ScoreMode::final));
      }
    });
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      record(std::vector<CostEvent>(ensemble_.size(), verify_event()));
    }
    const Ensemble::Selection sel = ensemble_.select(scores);

    nlohmann::json finalists = nlohmann::json::array();
    for (std::size_t c = 0; c < sel.aggregate.candidates.size(); ++c) {
      const NodeId leaf = sel.aggregate.candidates[c];
      const auto idx = static_cast<std::size_t>(std::find(leaves.begin(), leaves.end(), leaf) - leaves.begin());
      Finalist f;
      f.leaf = leaf;
      f.accumulated_score = node(leaf).total_score;
      f.aggregated_score = sel.aggregate.scores[c];
      f.scores = scores[idx];
      f.weighted_raw = ensemble_.weighted_raw(f.scores);
      nlohmann::json raw = nlohmann::json::object();
      for (const auto& s : f.scores) raw[s.verifier_id] = s.scored ? nlohmann::json(s.raw_score) : nlohmann::json(nullptr);
      finalists.push_back({{"leaf", leaf},
                           {"s", f.accumulated_score},
                           {"H", f.aggregated_score},
                           {"raw", raw}});
      result_.finalists.push_back(std::move(f));
    }
    const NodeId best = sel.aggregate.best;
    result_.best_path = path_to(best);
    const auto& bf = result_.finalists[sel.aggregate.best_index];
    result_.best_path.final_score = bf.weighted_raw.value_or(0.0);
    result_.aggregated_score = bf.aggregated_score;
    result_.accumulated_score = node(best).total_score;
    result_.events.push_back({{"event", "select"}, {"best", best}, {"finalists", finalists}});
  }

  SearchResult finish() { return std::move(result_); }

  const RunConfig& config() const { return config_; }
  const Schedule& schedule() const { return schedule_; }
  Generator& generator() { return generator_; }
  const Ensemble& ensemble() const { return ensemble_; }
  const SearchOptions& options() const { return options_; }
  SearchResult& result() { return result_; }

 private:
  const RunConfig& config_;
  const Schedule& schedule_;
  Generator& generator_;
  const Ensemble& ensemble_;
  const SearchOptions& options_;
  StagedPrompts prompts_;
  std::vector<Stage> stages_;
  std::vector<CandidateNode> forest_;
  SearchResult result_;
};

CandidateNode make_node(NodeId id, const CandidateNode* parent, int t, std::uint64_t seed, Stage stage) {
  CandidateNode n;
  n.node_id = id;
  if (parent) n.parent_id = parent->node_id;
  n.frame_index = t;
  n.seed = seed;
  n.stage = stage;
  return n;
}

/// Work item for one child expansion in a ToF level.
struct ChildWork {
  CandidateNode node;
  std::size_t parent_slot = 0;
  std::vector<CostEvent> costs;
  PartialFrameState state;
  std::optional<double> partial_score;
  std::optional<GateDecision> clarity;
  std::optional<GateDecision> potential;
  bool resurrected = false;
  bool dropped = false;
  bool rejected = false;
  std::string fault;
};

}  // namespace

SearchResult random_linear_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                                  const SearchOptions& options) {
  Run run(config, generator, ensemble, options);
  const Schedule& s = run.schedule();
  const auto n_paths = static_cast<std::size_t>(s.roots);
  const auto depth = static_cast<std::size_t>(s.depth);
  const NodeId first = run.reserve_ids(n_paths * depth);

  std::vector<std::vector<CostEvent>> costs(n_paths * depth);
  std::vector<std::string> failure(n_paths);
  parallel_for(n_paths, options.threads, [&](std::size_t i) {
    try {
      const NodeId base = first + static_cast<NodeId>(i * depth);
      CandidateNode& root = run.node(base);
      root = make_node(base, nullptr, 0, root_seed(run.config().master_seed, i), stage_of_frame(0, s));
      FrameResult r = generator.sample_root(root.seed, run.routed(0));
      root.latent = std::move(r.state.latent);
      costs[i * depth].push_back(r.cost);
      for (int t = 1; t < s.depth; ++t) {
        const CandidateNode& parent = run.node(base + t - 1);
        CandidateNode& child = run.node(base + t);
        child = make_node(base + t, &parent, t, child_seed(parent.seed, 0, t), stage_of_frame(t, s));
        FrameResult c = generator.extend(parent, t, child.seed, run.routed(t), s.denoise_steps_per_frame);
        child.latent = std::move(c.state.latent);
        costs[i * depth + static_cast<std::size_t>(t)].push_back(c.cost);
      }
    } catch (const TransportError& e) {
      failure[i] = e.what();
    }
  });

  std::vector<NodeId> leaves;
  for (std::size_t i = 0; i < n_paths; ++i) {
    for (std::size_t t = 0; t < depth; ++t) {
      const auto& c = costs[i * depth + t];
      if (c.empty()) continue;
      run.record(c);
      run.node_event(run.node(first + static_cast<NodeId>(i * depth + t)), "generated", c);
    }
    if (!failure[i].empty()) {
      run.fault_event(first + static_cast<NodeId>(i * depth), failure[i]);
      continue;
    }
    leaves.push_back(first + static_cast<NodeId>(i * depth + depth - 1));
  }
  if (leaves.empty()) throw RunError("every linear-search candidate failed");
  run.select_final(leaves);
  SearchResult out = run.finish();
  out.algorithm = Algorithm::linear;
  return out;
}

SearchResult tof_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                        const SearchOptions& options) {
  Run run(config, generator, ensemble, options);
  const Schedule& s = run.schedule();
  const std::vector<std::int64_t> k = survivor_counts(s);
  const int steps = s.denoise_steps_per_frame;
  const bool gated = run.config().gates.enabled && generator.capabilities().supports_partial_denoise;
  const double theta_c = run.config().gates.clarity_threshold;
  auto clarity = options.clarity ? options.clarity
                                 : std::function<GateDecision(const PartialFrameState&, double)>(clarity_gate);

  // Roots enter the frontier with score 0.
  const auto n_roots = static_cast<std::size_t>(s.roots);
  const NodeId first_root = run.reserve_ids(n_roots);
  std::vector<std::vector<CostEvent>> root_costs(n_roots);
  std::vector<std::string> root_fail(n_roots);
  parallel_for(n_roots, options.threads, [&](std::size_t i) {
    CandidateNode& root = run.node(first_root + static_cast<NodeId>(i));
    root = make_node(first_root + static_cast<NodeId>(i), nullptr, 0, root_seed(run.config().master_seed, i),
                     stage_of_frame(0, s));
    try {
      FrameResult r = generator.sample_root(root.seed, run.routed(0));
      root.latent = std::move(r.state.latent);
      root_costs[i].push_back(r.cost);
    } catch (const TransportError& e) {
      root_fail[i] = e.what();
    }
  });
  std::vector<CandidateNode> level_nodes;
  for (std::size_t i = 0; i < n_roots; ++i) {
    const CandidateNode& root = run.node(first_root + static_cast<NodeId>(i));
    run.record(root_costs[i]);
    if (!root_fail[i].empty()) {
      run.node_event(root, "dropped", root_costs[i]);
      run.fault_event(root.node_id, root_fail[i]);
      continue;
    }
    run.node_event(root, "generated", root_costs[i]);
    level_nodes.push_back(root);
  }
  if (level_nodes.empty()) throw RunError("every root failed to generate");
  FrontierQueue frontier(std::move(level_nodes));

  std::vector<NodeId> leaves;
  for (int t = 1; t < s.depth; ++t) {
    const int b = branch_factor(t, s);
    const StagePrompt prompt = run.routed(t);

    std::vector<CandidateNode> parents;
    while (!frontier.empty()) parents.push_back(frontier.dequeue());

    std::vector<ChildWork> work;
    work.reserve(parents.size() * static_cast<std::size_t>(b));
    for (std::size_t p = 0; p < parents.size(); ++p) {
      for (int m = 0; m < b; ++m) {
        const NodeId id = run.reserve_ids(1);
        ChildWork w;
        w.node = make_node(id, &parents[p], t, child_seed(parents[p].seed, static_cast<std::uint64_t>(m), t),
                           stage_of_frame(t, s));
        w.parent_slot = p;
        work.push_back(std::move(w));
      }
    }

    if (!gated) {
      parallel_for(work.size(), options.threads, [&](std::size_t i) {
        ChildWork& w = work[i];
        try {
          FrameResult r = generator.extend(parents[w.parent_slot], t, w.node.seed, prompt, steps);
          w.costs.push_back(r.cost);
          w.state = std::move(r.state);
        } catch (const TransportError& e) {
          w.dropped = true;
          w.fault = e.what();
        }
      });
    } else {
      const int clarity_steps = std::clamp(static_cast<int>(std::ceil(theta_c * steps - 1e-9)), 1, steps);
      parallel_for(work.size(), options.threads, [&](std::size_t i) {
        ChildWork& w = work[i];
        try {
          PartialFrameState st = generator.begin_frame(parents[w.parent_slot], t, w.node.seed, prompt);
          FrameResult r = generator.partial_denoise(st, clarity_steps);
          w.costs.push_back(r.cost);
          st = std::move(r.state);
          GateDecision c = clarity(st, theta_c);
          while (!c.verdict && !st.complete()) {
            FrameResult more = generator.partial_denoise(st, 1);
            w.costs.push_back(more.cost);
            st = std::move(more.state);
            c = clarity(st, theta_c);
          }
          // a fully denoised frame is always evaluable
          if (!c.verdict) c.verdict = true;
          w.clarity = c;
          std::vector<LatentRef> frames = run.chain_latents(parents[w.parent_slot].node_id);
          frames.push_back(st.latent);
          const Artifact a = run.preview(std::move(frames));
          const Ensemble::Heuristic h = run.ensemble().heuristic(w.node.node_id, a, prompt, ScoreMode::frame);
          w.partial_score = h.value;
          for (std::size_t v = 0; v < h.scores.size(); ++v) w.costs.push_back(verify_event());
          w.state = std::move(st);
        } catch (const TransportError& e) {
          w.dropped = true;
          w.fault = e.what();
        }
      });

      std::vector<double> partials;
      for (const auto& w : work) {
        if (!w.dropped && w.partial_score) partials.push_back(*w.partial_score);
      }
      const double theta_p = run.config().gates.potential_threshold
                                 ? *run.config().gates.potential_threshold
                                 : (partials.empty() ? 0.0 : median(partials));
      for (auto& w : work) {
        if (w.dropped) continue;
        w.potential = potential_gate(*w.clarity, w.partial_score, theta_p);
        w.rejected = !w.potential->verdict;
      }
      // Never let a parent lose every child to the gates.
      for (std::size_t p = 0; p < parents.size(); ++p) {
        ChildWork* best = nullptr;
        bool any_pass = false;
        for (auto& w : work) {
          if (w.parent_slot != p || w.dropped) continue;
          if (!w.rejected) any_pass = true;
          auto better = [](const ChildWork& a, const ChildWork& b) {
            if (a.partial_score.has_value() != b.partial_score.has_value()) return a.partial_score.has_value();
            if (a.partial_score && *a.partial_score != *b.partial_score) return *a.partial_score > *b.partial_score;
            return a.node.node_id < b.node.node_id;
          };
          if (best == nullptr || better(w, *best)) best = &w;
        }
        if (!any_pass && best != nullptr) {
          best->rejected = false;
          best->resurrected = true;
        }
      }
      parallel_for(work.size(), options.threads, [&](std::size_t i) {
        ChildWork& w = work[i];
        if (w.dropped || w.rejected || w.state.complete()) return;
        try {
          FrameResult r = generator.partial_denoise(w.state, w.state.steps_total - w.state.steps_done);
          w.costs.push_back(r.cost);
          w.state = std::move(r.state);
        } catch (const TransportError& e) {
          w.dropped = true;
          w.fault = e.what();
        }
      });
    }

    // Heuristic reward of every finished child.
    parallel_for(work.size(), options.threads, [&](std::size_t i) {
      ChildWork& w = work[i];
      if (w.dropped || w.rejected) return;
      w.node.latent = w.state.latent;
      std::vector<LatentRef> frames = run.chain_latents(parents[w.parent_slot].node_id);
      frames.push_back(w.node.latent);
      const Artifact a = run.preview(std::move(frames));
      const Ensemble::Heuristic h = run.ensemble().heuristic(w.node.node_id, a, prompt, ScoreMode::frame);
      for (std::size_t v = 0; v < h.scores.size(); ++v) w.costs.push_back(verify_event());
      w.node.local_reward = h.value.value_or(0.0);
      w.node.total_score = parents[w.parent_slot].total_score + w.node.local_reward;
    });

    std::vector<CandidateNode> produced;
    for (auto& w : work) {
      if (w.rejected || w.dropped) w.node.latent = w.state.latent;
      run.node(w.node.node_id) = w.node;
      run.record(w.costs);
      nlohmann::json gates = nullptr;
      if (w.clarity) {
        gates = {{"clarity", w.clarity->verdict},
                 {"potential", w.potential ? nlohmann::json(w.potential->verdict) : nlohmann::json(nullptr)},
                 {"partial_score", w.partial_score ? nlohmann::json(*w.partial_score) : nlohmann::json(nullptr)},
                 {"resurrected", w.resurrected}};
      }
      const char* status = w.dropped ? "dropped" : (w.rejected ? "rejected" : "generated");
      run.node_event(w.node, status, w.costs, gates);
      if (w.dropped) {
        run.fault_event(w.node.node_id, w.fault);
        continue;
      }
      if (!w.rejected) produced.push_back(w.node);
    }
    if (produced.empty()) throw RunError("level " + std::to_string(t) + " produced no candidates");

    if (t == s.depth - 1) {
      for (const auto& n : produced) leaves.push_back(n.node_id);
      break;
    }
    PruneOutcome pruned = prune_top_k(std::move(produced), k[static_cast<std::size_t>(t)], t);
    nlohmann::json retained = nlohmann::json::array();
    nlohmann::json discarded = nlohmann::json::array();
    for (const auto& n : pruned.retained) retained.push_back(n.node_id);
    for (const auto& n : pruned.discarded) discarded.push_back(n.node_id);
    run.result().events.push_back({{"event", "prune"},
                                   {"t", t},
                                   {"k_in", pruned.k_in},
                                   {"k_out", pruned.k_out},
                                   {"retained", retained},
                                   {"discarded", discarded}});
    frontier = FrontierQueue(pruned.retained);
    run.result().prunes.push_back(std::move(pruned));
  }

  if (s.depth == 1) {
    for (const auto& n : frontier.nodes()) leaves.push_back(n.node_id);
  }
  std::sort(leaves.begin(), leaves.end());
  run.select_final(leaves);
  SearchResult out = run.finish();
  out.algorithm = Algorithm::tof;
  return out;
}

SearchResult run_search(const RunConfig& config, Generator& generator, const Ensemble& ensemble,
                        const SearchOptions& options) {
  switch (config.algorithm) {
    case Algorithm::linear: return random_linear_search(config, generator, ensemble, options);
    case Algorithm::tof: return tof_search(config, generator, ensemble, options);
    case Algorithm::oracle: break;
  }
  throw ConfigError("run_search: the oracle is not a search algorithm");
}

}  // namespace tof
