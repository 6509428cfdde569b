#pragma once

#include "pchpo/objective.hpp"
#include "pchpo/optimizer.hpp"
#include "pchpo/search_space.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pchpo {

using Json = nlohmann::ordered_json;

/*======================================================================================================================
 * JSON views
 *====================================================================================================================*/

Json to_json(const ParamValue &value);
/** {name: value} in space order. */
Json to_json(const SearchSpace &space, const Configuration &config);
/** Space description for form generation: hyperparameters with their domains and the accepted distribution families. */
Json describe_space(const SearchSpace &space);
/** An interaction object in the same dialect `parse_interactions` reads, without `iteration`. */
Json interaction_to_json(const SearchSpace &space, const UserKnowledge &knowledge);

/*======================================================================================================================
 * Run configuration
 *====================================================================================================================*/

struct RunConfig
{
    std::string space_path;        ///< empty: the built-in objective's own space
    std::string objective = "mixed_synthetic"; ///< branin | mixed_synthetic | table:PATH | command:TEMPLATE
    std::string interactions_path; ///< empty: no script
    std::optional<int> serve_port;
    std::string log_path;          ///< empty or "-": standard output
    bool minimize = false;
    double noise_sigma = 0;
    double command_timeout = 600;  ///< seconds per command evaluation
    OptimizerParams params;

    /** Throws `ValidationError` naming the offending setting. */
    void validate() const;
};

/** Everything a run needs, loaded and validated. */
struct RunSetup
{
    SearchSpace space;
    std::unique_ptr<Objective> objective; ///< in the maximization sign
    std::vector<UserKnowledge> script;
};

/** Reads the files named by `config` and builds the objective.  Throws `ValidationError` or `ParseError` with the
 * setting or file in the message. */
RunSetup prepare_run(const RunConfig &config);

/*======================================================================================================================
 * Status
 *====================================================================================================================*/

struct KnowledgeSummary
{
    std::string kind; ///< "point" | "dist"
    Json intervention;
    std::int64_t T = 0;
    double gate_probability = 0; ///< for the next iteration
};

/** Immutable view of a run, rebuilt after every iteration.  Scores are in the user's sign. */
struct StatusSnapshot
{
    std::int64_t iteration = 0; ///< index of the next trial, i.e. the number of completed trials
    std::int64_t max_iterations = 0;
    bool completed = false;
    Json incumbent;             ///< {iteration, config, score} or null
    std::vector<Json> recent_trials;
    std::optional<KnowledgeSummary> knowledge;
    std::vector<std::int64_t> variance_iterations;
    std::vector<std::vector<double>> variance; ///< one row per entry of `variance_iterations`, in space order
    std::vector<std::int64_t> refit_iterations;
};

Json to_json(const SearchSpace &space, const StatusSnapshot &status);

/*======================================================================================================================
 * Runner
 *====================================================================================================================*/

/** Drives an `Optimizer` against an objective, applying scripted interactions when their iteration is reached and live
 * ones at the next iteration boundary.  `step`/`run` belong to one thread; `submit`, `status` and `trials` may be
 * called from any thread. */
class Runner
{
public:
    enum class Submit { Accepted, Completed };

    Runner(SearchSpace space, OptimizerParams params, std::unique_ptr<Objective> objective,
           std::vector<UserKnowledge> script = {}, bool minimize = false);
    ~Runner();

    /** Trial log destination, one JSON record per line; flushed after every record. */
    void set_log(std::ostream *log) { log_ = log; }
    /** Destination for human-readable warnings. */
    void set_warnings(std::ostream *warnings) { warnings_ = warnings; }

    /** Runs one iteration; false once the run is complete. */
    bool step();
    void run();

    /** Queue knowledge for the next iteration boundary.  The caller validates it against the space first. */
    Submit submit(UserKnowledge knowledge);
    /** Parse a live interaction body (one object, no `iteration`).  Throws `ValidationError` or `ParseError`. */
    UserKnowledge parse_live(std::string_view body) const;

    std::shared_ptr<const StatusSnapshot> status() const;
    /** Trial records with index >= from. */
    std::vector<Json> trials(std::size_t from) const;
    bool completed() const;

    const SearchSpace & space() const { return space_; }
    /** Not synchronized with `step`. */
    const Optimizer & optimizer() const { return optimizer_; }

private:
    void apply(const UserKnowledge &knowledge, const char *source);
    void emit(const Json &record);
    Json trial_record(const Trial &trial);
    void publish();

    SearchSpace space_;
    Optimizer optimizer_;
    std::unique_ptr<Objective> objective_;
    std::vector<UserKnowledge> script_;
    std::size_t script_next_ = 0;
    double sign_;
    double cumulative_cost_ = 0;

    std::ostream *log_ = nullptr;
    std::ostream *warnings_ = nullptr;

    std::vector<std::int64_t> variance_iterations_;
    std::vector<std::vector<double>> variance_;

    mutable std::mutex mailbox_mutex_;
    std::vector<UserKnowledge> mailbox_;
    bool completed_ = false;

    mutable std::mutex records_mutex_;
    std::vector<Json> records_;

    mutable std::mutex status_mutex_;
    std::shared_ptr<const StatusSnapshot> status_;
};

/*======================================================================================================================
 * HTTP
 *====================================================================================================================*/

/** HTTP control surface for a `Runner`:
 *
 *     GET    /status          StatusSnapshot
 *     GET    /trials?from=i   trial records from index i
 *     GET    /space           space description
 *     POST   /knowledge       one interaction object -> 202 | 400 {field, message} | 409
 *     DELETE /knowledge       clear -> 202 | 409
 */
class Server
{
public:
    explicit Server(Runner &runner);
    ~Server();

    /** Binds and starts serving on a background thread; port 0 picks a free port.  Returns the bound port, or throws
     * `std::runtime_error` if binding fails. */
    int start(const std::string &host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace pchpo
