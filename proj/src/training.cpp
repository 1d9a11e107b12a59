#include "cds/training.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "cds/analysis.hpp"
#include "cds/rng.hpp"
#include "cds/text.hpp"

namespace cds {

TrainResult train_multitask(const MultiTaskMdp& mdp, const std::vector<TaskDataset>& raw,
                            const SharingStrategy& strategy, const LearnerConfig& cfg,
                            std::uint64_t seed) {
    validate_config(cfg);
    if (static_cast<index_t>(raw.size()) != mdp.num_tasks)
        throw std::invalid_argument("need one dataset per task");

    const index_t S = mdp.num_states, A = mdp.num_actions;
    auto batch_rng = substream(seed, "train/batch");
    auto coin = substream(seed, "train/coin");

    TrainResult result;
    result.temperature = make_temperature(mdp.num_tasks, strategy);
    result.table.q.assign(static_cast<std::size_t>(mdp.num_tasks), matrix_t::Zero(S, A));
    result.shared_view = result.table;
    result.policy = extract_policy(result.table, cfg.policy_temperature);

    int remaining = cfg.iterations;
    for (int round = 0; remaining > 0; ++round) {
        const TabularPolicy probe = extract_policy(result.shared_view, cfg.policy_temperature);

        result.effective.clear();
        std::vector<scalar_t> admitted(static_cast<std::size_t>(mdp.num_tasks), 0.0);
        for (index_t i = 0; i < mdp.num_tasks; ++i) {
            std::vector<AdmissionRecord> audit;
            BuildOptions opts;
            opts.policy = &probe;
            opts.temperature = &result.temperature;
            opts.coin = &coin;
            opts.weight_rule = cfg.weight_rule;
            opts.audit = &audit;
            result.effective.push_back(
                build_effective_dataset(strategy, result.shared_view, raw, i, mdp, opts));

            std::size_t offered = 0;
            scalar_t weight_in = 0.0;
            for (const AdmissionRecord& r : audit) {
                if (r.origin == r.target) continue;  // own data is not a candidate
                ++offered;
                if (r.admitted) weight_in += r.weight;
            }
            admitted[static_cast<std::size_t>(i)] =
                offered == 0 ? 0.0 : weight_in / static_cast<scalar_t>(offered);
        }

        LearnerConfig block = cfg;
        block.iterations = std::min(cfg.rebuild_every, remaining);
        remaining -= block.iterations;
        if (cfg.learner == LearnerKind::Brac) {
            result.brac = brac_fitted_iteration(S, A, result.effective, block, &batch_rng,
                                                &result.table);
            result.table = result.brac.table;
            result.shared_view = result.table;
            result.shared_view.q = result.brac.conservative_q;
        } else {
            result.table = cql_fitted_iteration(S, A, result.effective, block, &batch_rng,
                                                &result.table);
            result.shared_view = result.table;
        }
        result.policy = extract_policy(result.table, cfg.policy_temperature);

        const EmpiricalBehaviorPolicy behavior = estimate_behavior_policy(result.effective, S, A);
        for (index_t i = 0; i < mdp.num_tasks; ++i) {
            TrainingLogRow row;
            row.round = round;
            row.task = i;
            row.dataset_size = result.effective[static_cast<std::size_t>(i)].transitions.size();
            row.admitted_fraction = admitted[static_cast<std::size_t>(i)];
            row.j_eval = evaluate_policy(mdp, result.policy, i);
            row.kl_div = kl_policy_divergence(
                             result.policy, behavior,
                             dataset_state_distribution(
                                 result.effective[static_cast<std::size_t>(i)], S),
                             i)
                             .average;
            result.log.push_back(row);
        }
    }
    return result;
}

void write_training_csv(std::ostream& out, const std::vector<TrainingLogRow>& log) {
    out << "round,task,dataset_size,admitted_fraction,J_eval,kl_div\n";
    for (const TrainingLogRow& row : log)
        out << row.round << ',' << row.task << ',' << row.dataset_size << ','
            << format_double(row.admitted_fraction) << ',' << format_double(row.j_eval) << ','
            << format_double(row.kl_div) << '\n';
}

std::vector<TrainingLogRow> read_training_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "round,task,dataset_size,admitted_fraction,J_eval,kl_div")
        throw std::invalid_argument("not a training log: bad header");
    std::vector<TrainingLogRow> log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto fields = split_fields(line, ',');
        if (fields.size() != 6)
            throw std::invalid_argument("training log row needs 6 fields: '" + line + "'");
        TrainingLogRow row;
        row.round = static_cast<int>(parse_int(fields[0]));
        row.task = static_cast<index_t>(parse_int(fields[1]));
        row.dataset_size = static_cast<std::size_t>(parse_int(fields[2]));
        row.admitted_fraction = parse_double(fields[3]);
        row.j_eval = parse_double(fields[4]);
        row.kl_div = parse_double(fields[5]);
        log.push_back(row);
    }
    return log;
}

}  // namespace cds
