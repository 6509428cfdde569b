#include "pchpo/service.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <variant>

namespace pchpo {

namespace {

template<class... Ts> struct overloaded : Ts... { using Ts::operator()...; };
template<class... Ts> overloaded(Ts...) -> overloaded<Ts...>;

constexpr std::size_t kRecentTrials = 20;

Json optional_number(const std::optional<double> &x)
{
    return x ? Json(*x) : Json(nullptr);
}

std::string read_file(const std::string &path, const std::string &setting)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError(setting, "cannot read '" + path + "'");
    std::ostringstream text;
    text << in.rdbuf();
    return text.str();
}

/** Re-throw a parse or validation failure inside a file with the file named. */
template<class F>
auto within_file(const std::string &setting, const std::string &path, F &&f)
{
    try {
        return f();
    } catch (const ParseError &e) {
        throw ValidationError(setting, path + ": " + e.what());
    } catch (const ValidationError &e) {
        throw ValidationError(setting, path + ": " + e.what());
    }
}

const char * kind_name(UserKnowledge::Kind kind)
{
    switch (kind) {
        case UserKnowledge::Kind::PointMass: return "point";
        case UserKnowledge::Kind::Prior: return "dist";
        case UserKnowledge::Kind::Clear: return "clear";
    }
    return "clear";
}

} // namespace

/*======================================================================================================================
 * JSON views
 *====================================================================================================================*/

Json to_json(const ParamValue &value)
{
    return std::visit([](const auto &v) { return Json(v); }, value);
}

Json to_json(const SearchSpace &space, const Configuration &config)
{
    Json out = Json::object();
    for (std::size_t i = 0; i != space.size(); ++i)
        out[space[i].name] = to_json(config[i]);
    return out;
}

Json describe_space(const SearchSpace &space)
{
    Json hps = Json::array();
    for (const auto &def : space.hyperparameters()) {
        Json h{ { "name", def.name } };
        std::visit(overloaded{
            [&](const CategoricalDomain &d) {
                h["type"] = "cat";
                h["labels"] = d.labels;
                h["distributions"] = { "cat" };
            },
            [&](const IntegerDomain &d) {
                h["type"] = "int";
                h["lo"] = d.lo;
                h["hi"] = d.hi;
                h["log"] = d.log_scale;
                h["distributions"] = { "cat", "uniform", "int_uniform", "normal" };
            },
            [&](const ContinuousDomain &d) {
                h["type"] = "float";
                h["lo"] = d.lo;
                h["hi"] = d.hi;
                h["log"] = d.log_scale;
                h["distributions"] = { "cat", "uniform", "int_uniform", "normal" };
            },
        }, def.domain);
        hps.push_back(std::move(h));
    }
    return Json{ { "score", space.score_name() }, { "hyperparameters", std::move(hps) } };
}

Json interaction_to_json(const SearchSpace &space, const UserKnowledge &knowledge)
{
    Json out = Json::object();
    if (!knowledge.polarity_label.empty())
        out["type"] = knowledge.polarity_label;
    if (knowledge.is_clear()) {
        out["intervention"] = nullptr;
        return out;
    }
    out["kind"] = kind_name(knowledge.kind);

    Json intervention = Json::object();
    for (const auto &[index, spec] : knowledge.entries) {
        intervention[space[index].name] = std::visit(overloaded{
            [](const CategoricalDist &d) {
                Json j{ { "dist", "cat" }, { "parameters", d.weights } };
                if (!d.values.empty()) {
                    j["values"] = Json::array();
                    for (const auto &v : d.values)
                        j["values"].push_back(to_json(v));
                }
                return j;
            },
            [](const UniformDist &d) { return Json{ { "dist", "uniform" }, { "parameters", { d.lo, d.hi } } }; },
            [](const IntUniformDist &d) {
                return Json{ { "dist", "int_uniform" }, { "parameters", { d.lo, d.hi } } };
            },
            [](const NormalDist &d) { return Json{ { "dist", "normal" }, { "parameters", { d.mu, d.sigma } } }; },
            [](const PointDist &d) { return to_json(d.value); },
        }, spec);
    }
    out["intervention"] = std::move(intervention);
    return out;
}

Json to_json(const SearchSpace &space, const StatusSnapshot &status)
{
    Json knowledge = nullptr;
    if (status.knowledge) {
        knowledge = Json{
            { "kind", status.knowledge->kind },
            { "intervention", status.knowledge->intervention },
            { "T", status.knowledge->T },
            { "gate_probability", status.knowledge->gate_probability },
        };
    }

    Json names = Json::array();
    for (const auto &def : space.hyperparameters())
        names.push_back(def.name);

    return Json{
        { "iteration", status.iteration },
        { "max_iterations", status.max_iterations },
        { "completed", status.completed },
        { "incumbent", status.incumbent },
        { "recent_trials", status.recent_trials },
        { "knowledge", std::move(knowledge) },
        { "sampling_variance",
          { { "hyperparameters", std::move(names) },
            { "iterations", status.variance_iterations },
            { "values", status.variance } } },
        { "refit_iterations", status.refit_iterations },
    };
}

/*======================================================================================================================
 * Run configuration
 *====================================================================================================================*/

void RunConfig::validate() const
{
    if (serve_port && (*serve_port < 1 || *serve_port > 65535))
        throw ValidationError("serve", "port must lie in [1, 65535]");
    if (!(noise_sigma >= 0) || !std::isfinite(noise_sigma))
        throw ValidationError("noise-sigma", "must be finite and >= 0");
    if (!(command_timeout > 0) || !std::isfinite(command_timeout))
        throw ValidationError("timeout", "must be finite and > 0");
    if (!space_path.empty() && !std::filesystem::is_regular_file(space_path))
        throw ValidationError("space", "no such file '" + space_path + "'");
    if (!interactions_path.empty() && !std::filesystem::is_regular_file(interactions_path))
        throw ValidationError("interactions", "no such file '" + interactions_path + "'");
    params.validate();
}

RunSetup prepare_run(const RunConfig &config)
{
    config.validate();

    RunSetup setup;
    std::optional<SearchSpace> file_space;
    if (!config.space_path.empty())
        file_space = within_file("space", config.space_path,
                                 [&] { return parse_space(read_file(config.space_path, "space")); });

    const std::string &sel = config.objective;
    auto builtin = [&](std::unique_ptr<Objective> objective) {
        if (file_space && !(*file_space == objective->space()))
            throw ValidationError("space", "'" + config.space_path + "' does not match the space of '" + sel + "'");
        return objective;
    };

    if (sel == "branin") {
        setup.objective = builtin(std::make_unique<BraninObjective>());
    } else if (sel == "mixed_synthetic") {
        setup.objective = builtin(std::make_unique<MixedSyntheticObjective>());
    } else if (sel.starts_with("table:")) {
        if (!file_space)
            throw ValidationError("space", "table objectives need --space");
        const std::string path = sel.substr(6);
        setup.objective = within_file("objective", path, [&] {
            return std::make_unique<TabularObjective>(parse_table(read_file(path, "objective"), *file_space));
        });
    } else if (sel.starts_with("command:")) {
        if (!file_space)
            throw ValidationError("space", "command objectives need --space");
        const auto timeout = std::chrono::milliseconds(std::int64_t(std::ceil(config.command_timeout * 1000)));
        setup.objective = std::make_unique<CommandObjective>(*file_space, sel.substr(8), timeout);
    } else {
        throw ValidationError("objective",
                              "unknown objective '" + sel + "' (expected branin, mixed_synthetic, table:PATH or "
                              "command:TEMPLATE)");
    }

    if (config.noise_sigma > 0)
        setup.objective = std::make_unique<NoisyObjective>(std::move(setup.objective), config.noise_sigma,
                                                           config.params.seed ^ 0x9e3779b97f4a7c15ULL);
    if (config.minimize)
        setup.objective = std::make_unique<NegatedObjective>(std::move(setup.objective));

    setup.space = setup.objective->space();
    if (!config.interactions_path.empty())
        setup.script = within_file("interactions", config.interactions_path, [&] {
            return parse_interactions(read_file(config.interactions_path, "interactions"), setup.space);
        });
    return setup;
}

/*======================================================================================================================
 * Runner
 *====================================================================================================================*/

Runner::Runner(SearchSpace space, OptimizerParams params, std::unique_ptr<Objective> objective,
               std::vector<UserKnowledge> script, bool minimize)
    : space_(std::move(space))
    , optimizer_(space_, params)
    , objective_(std::move(objective))
    , script_(std::move(script))
    , sign_(minimize ? -1.0 : 1.0)
{
    if (!objective_)
        throw std::invalid_argument("Runner needs an objective");
    if (!(objective_->space() == space_))
        throw ValidationError("objective", "objective space differs from the run space");
    for (auto &k : script_)
        for (const auto &[index, spec] : k.entries)
            validate_distribution(space_[index], spec, "intervention." + space_[index].name);
    std::stable_sort(script_.begin(), script_.end(),
                     [](const UserKnowledge &a, const UserKnowledge &b) { return a.received_at < b.received_at; });
    if (!minimize)
        if (auto optimum = objective_->known_maximizer())
            optimizer_.set_reference_optimum(*optimum);
    publish();
}

Runner::~Runner() = default;

void Runner::emit(const Json &record)
{
    if (!log_)
        return;
    *log_ << record.dump() << '\n';
    log_->flush();
}

void Runner::apply(const UserKnowledge &knowledge, const char *source)
{
    optimizer_.inject(knowledge);
    Json record{
        { "type", "knowledge" },
        { "iteration", optimizer_.iteration() },
        { "T", optimizer_.iteration() },
        { "source", source },
        { "kind", kind_name(knowledge.kind) },
    };
    const Json body = interaction_to_json(space_, knowledge);
    if (body.contains("type"))
        record["label"] = body["type"];
    record["intervention"] = body["intervention"];
    emit(record);
}

Json Runner::trial_record(const Trial &trial)
{
    cumulative_cost_ += trial.evaluation.cost;

    const auto &history = optimizer_.history();
    std::optional<double> incumbent;
    if (auto best = history.best_score())
        incumbent = sign_ * *best;

    Json variance = nullptr;
    if (!trial.sampling_variance.empty()) {
        variance = Json::object();
        for (std::size_t i = 0; i != space_.size(); ++i)
            variance[space_[i].name] = trial.sampling_variance[i];
    }

    Json record{
        { "type", "trial" },
        { "iteration", trial.iteration },
        { "config", to_json(space_, trial.config) },
        { "score", trial.evaluation.score ? Json(sign_ * *trial.evaluation.score) : Json(nullptr) },
        { "incumbent_score", optional_number(incumbent) },
        { "cumulative_cost", cumulative_cost_ },
        { "used_knowledge", trial.used_knowledge },
        { "refit_flag", trial.refit },
        { "sampling_variance_per_hyperparameter", std::move(variance) },
        { "ei_lower_bound", optional_number(trial.ei_lower_bound) },
    };
    if (trial.refit)
        record["score_isolated"] = trial.score_isolated;
    if (!trial.evaluation.ok()) {
        record["failure"] = to_string(trial.evaluation.failure);
        record["error"] = trial.evaluation.error;
    }
    return record;
}

bool Runner::step()
{
    if (optimizer_.finished()) {
        std::lock_guard lock(mailbox_mutex_);
        completed_ = true;
        return false;
    }

    const std::int64_t i = optimizer_.iteration();
    while (script_next_ != script_.size() && script_[script_next_].received_at <= i)
        apply(script_[script_next_++], "script");

    std::vector<UserKnowledge> live;
    {
        std::lock_guard lock(mailbox_mutex_);
        live.swap(mailbox_);
    }
    for (const auto &k : live)
        apply(k, "live");

    const Trial &trial = optimizer_.step(*objective_);
    if (trial.refit && trial.score_isolated && warnings_)
        *warnings_ << "warning: iteration " << trial.iteration
                   << ": the refitted surrogate separates the score from every hyperparameter; proposals ignore the "
                      "incumbent score until the next refit\n";

    Json record = trial_record(trial);
    emit(record);
    if (!trial.sampling_variance.empty()) {
        variance_iterations_.push_back(trial.iteration);
        variance_.push_back(trial.sampling_variance);
    }
    {
        std::lock_guard lock(records_mutex_);
        records_.push_back(std::move(record));
    }

    if (optimizer_.finished()) {
        std::lock_guard lock(mailbox_mutex_);
        completed_ = true;
    }
    publish();
    return !optimizer_.finished();
}

void Runner::run()
{
    while (step()) { }
}

Runner::Submit Runner::submit(UserKnowledge knowledge)
{
    std::lock_guard lock(mailbox_mutex_);
    if (completed_)
        return Submit::Completed;
    mailbox_.push_back(std::move(knowledge));
    return Submit::Accepted;
}

UserKnowledge Runner::parse_live(std::string_view body) const
{
    const auto parsed = Json::parse(body.begin(), body.end(), nullptr, false);
    if (parsed.is_discarded())
        throw ParseError(0, "request body is not valid JSON");
    if (!parsed.is_object())
        throw ValidationError("$", "expected a single interaction object");
    if (parsed.contains("iteration"))
        throw ValidationError("$.iteration", "live interactions apply at the next iteration; omit 'iteration'");
    return parse_interactions(body, space_, false).front();
}

bool Runner::completed() const
{
    std::lock_guard lock(mailbox_mutex_);
    return completed_;
}

std::shared_ptr<const StatusSnapshot> Runner::status() const
{
    std::lock_guard lock(status_mutex_);
    return status_;
}

std::vector<Json> Runner::trials(std::size_t from) const
{
    std::lock_guard lock(records_mutex_);
    if (from >= records_.size())
        return {};
    return { records_.begin() + std::ptrdiff_t(from), records_.end() };
}

void Runner::publish()
{
    auto s = std::make_shared<StatusSnapshot>();
    const auto &history = optimizer_.history();
    s->iteration = optimizer_.iteration();
    s->max_iterations = optimizer_.params().max_iterations;
    s->completed = optimizer_.finished();

    if (auto inc = history.incumbent()) {
        const Trial &t = history.trials()[*inc];
        s->incumbent = Json{
            { "iteration", t.iteration },
            { "config", to_json(space_, t.config) },
            { "score", sign_ * *t.evaluation.score },
        };
    } else {
        s->incumbent = nullptr;
    }

    {
        std::lock_guard lock(records_mutex_);
        const std::size_t first = records_.size() > kRecentTrials ? records_.size() - kRecentTrials : 0;
        s->recent_trials.assign(records_.begin() + std::ptrdiff_t(first), records_.end());
    }

    const auto &decay = optimizer_.decay();
    if (decay.active()) {
        const Json body = interaction_to_json(space_, *decay.knowledge);
        s->knowledge = KnowledgeSummary{
            kind_name(decay.knowledge->kind),
            body["intervention"],
            decay.T,
            gate_probability(decay, optimizer_.iteration()),
        };
    }

    s->variance_iterations = variance_iterations_;
    s->variance = variance_;
    s->refit_iterations = optimizer_.refit_iterations();

    std::lock_guard lock(status_mutex_);
    status_ = std::move(s);
}

} // namespace pchpo
