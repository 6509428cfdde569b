#include "pchpo/objective.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

extern char **environ;

namespace pchpo {

const char * to_string(Evaluation::Failure failure)
{
    switch (failure) {
        case Evaluation::Failure::None: return "none";
        case Evaluation::Failure::Spawn: return "spawn";
        case Evaluation::Failure::Exit: return "exit";
        case Evaluation::Failure::Timeout: return "timeout";
        case Evaluation::Failure::Parse: return "parse";
        case Evaluation::Failure::Other: return "other";
    }
    return "other";
}

/*======================================================================================================================
 * Closed-form objectives
 *====================================================================================================================*/

double branin(double x1, double x2)
{
    using std::numbers::pi;
    constexpr double a = 1, r = 6, s = 10;
    const double b = 5.1 / (4 * pi * pi), c = 5 / pi, t = 1 / (8 * pi);
    const double u = x2 - b * x1 * x1 + c * x1 - r;
    return -(a * u * u + s * (1 - t) * std::cos(x1) + s);
}

double mixed_synthetic(const std::string &c, std::int64_t k, double x)
{
    struct Optimum { double base; double k; double x; };
    static const std::map<std::string, Optimum, std::less<>> optima{
        { "a", { 1.0, 3, 0.2 } },
        { "b", { 0.5, 7, 0.8 } },
        { "c", { 0.0, 0, 0.5 } },
    };
    const auto &o = optima.at(c);
    const double dk = double(k) - o.k, dx = x - o.x;
    return o.base - dk * dk / 10 - 5 * dx * dx;
}

SearchSpace branin_space()
{
    return SearchSpace({ { "x1", ContinuousDomain{ -5, 10 } }, { "x2", ContinuousDomain{ 0, 15 } } });
}

SearchSpace mixed_synthetic_space()
{
    return SearchSpace({ { "C", CategoricalDomain{ { "a", "b", "c" } } },
                         { "K", IntegerDomain{ 0, 9 } },
                         { "x", ContinuousDomain{ 0, 1 } } });
}

Evaluation BraninObjective::evaluate(const Configuration &config)
{
    return Evaluation::success(branin(std::get<double>(config[0]), std::get<double>(config[1])), cost_);
}

std::optional<double> BraninObjective::known_optimum() const { return branin(std::numbers::pi, 2.275); }

std::optional<Configuration> BraninObjective::known_maximizer() const
{
    return Configuration(space_, { std::numbers::pi, 2.275 });
}

Evaluation MixedSyntheticObjective::evaluate(const Configuration &config)
{
    return Evaluation::success(mixed_synthetic(std::get<std::string>(config[0]), std::get<std::int64_t>(config[1]),
                                               std::get<double>(config[2])),
                               cost_);
}

std::optional<Configuration> MixedSyntheticObjective::known_maximizer() const
{
    return Configuration(space_, { std::string("a"), std::int64_t(3), 0.2 });
}

/*======================================================================================================================
 * Tabular objective
 *====================================================================================================================*/

namespace {

std::string key_of(const Configuration &config)
{
    std::string key;
    for (const auto &v : config.values()) {
        key += to_string(v);
        key += '\x1f';
    }
    return key;
}

std::vector<std::string> split_ws(const std::string &line)
{
    std::istringstream in(line);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

double to_double(const std::string &tok, std::size_t line, const char *what)
{
    double v;
    auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || end != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError(line, std::string("expected a number for ") + what + ", got '" + tok + "'");
    return v;
}

} // namespace

TabularObjective::TabularObjective(SearchSpace space, std::vector<Row> rows, std::string name)
    : space_(std::move(space)), rows_(std::move(rows)), name_(std::move(name)), grid_(space_.size())
{
    if (rows_.empty())
        throw ValidationError("table", "a table needs at least one row");
    for (const auto &row : rows_) {
        if (!(row.cost >= 0))
            throw ValidationError("table", "costs must be non-negative");
        for (std::size_t i = 0; i != space_.size(); ++i)
            if (space_[i].is_continuous()) grid_[i].push_back(space_.to_model(i, row.config[i]));
    }
    for (auto &g : grid_) {
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
    }
}

Configuration TabularObjective::round(const Configuration &config) const
{
    std::vector<ParamValue> values = config.values();
    for (std::size_t i = 0; i != space_.size(); ++i) {
        if (!space_[i].is_continuous()) continue;
        const auto &g = grid_[i];
        const double x = space_.to_model(i, values[i]);
        auto it = std::lower_bound(g.begin(), g.end(), x);
        if (it == g.end() || (it != g.begin() && x - *(it - 1) <= *it - x)) --it;
        /* re-read the exact table value so snapped keys match the table byte for byte */
        for (const auto &row : rows_)
            if (space_.to_model(i, row.config[i]) == *it) {
                values[i] = row.config[i];
                break;
            }
    }
    return Configuration(space_, std::move(values));
}

std::size_t TabularObjective::nearest_row(const Configuration &config) const
{
    std::vector<double> target(space_.size());
    for (std::size_t i = 0; i != space_.size(); ++i) target[i] = space_.to_model(i, config[i]);

    std::size_t best = 0;
    double best_distance = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r != rows_.size(); ++r) {
        double d = 0;
        for (std::size_t i = 0; i != space_.size(); ++i) {
            const auto enc = space_.encoding(i);
            const double diff = target[i] - space_.to_model(i, rows_[r].config[i]);
            if (space_[i].is_categorical()) {
                d += diff != 0 ? 1.0 : 0.0;
            } else {
                const double width = enc.kind == ModelEncoding::Kind::Discrete ? double(enc.cardinality - 1)
                                                                               : enc.hi - enc.lo;
                d += width > 0 ? (diff / width) * (diff / width) : 0.0;
            }
        }
        if (d < best_distance) {
            best_distance = d;
            best = r;
        }
    }
    return best;
}

Evaluation TabularObjective::evaluate(const Configuration &config)
{
    const Configuration key = round(config);
    const std::string k = key_of(key);
    for (const auto &row : rows_)
        if (key_of(row.config) == k) return Evaluation::success(row.score, row.cost);
    const auto &row = rows_[nearest_row(key)];
    return Evaluation::success(row.score, row.cost);
}

std::optional<double> TabularObjective::known_optimum() const
{
    return std::max_element(rows_.begin(), rows_.end(), [](auto &a, auto &b) { return a.score < b.score; })->score;
}

std::optional<Configuration> TabularObjective::known_maximizer() const
{
    return std::max_element(rows_.begin(), rows_.end(), [](auto &a, auto &b) { return a.score < b.score; })->config;
}

TabularObjective parse_table(std::string_view document, const SearchSpace &space)
{
    std::istringstream in{ std::string(document) };
    std::vector<std::size_t> column_of; // table column -> space index
    std::size_t score_column = 0, cost_column = 0, line_no = 0;
    bool have_header = false;
    std::vector<TabularObjective::Row> rows;

    for (std::string line; std::getline(in, line);) {
        ++line_no;
        auto tok = split_ws(line);
        if (tok.empty() || tok[0][0] == '#') continue;

        if (!have_header) {
            if (tok.size() != space.size() + 2)
                throw ParseError(line_no, "header must name every hyperparameter plus 'score' and 'cost'");
            std::vector<bool> seen(space.size(), false);
            bool have_score = false, have_cost = false;
            for (std::size_t c = 0; c != tok.size(); ++c) {
                if (tok[c] == "score") { score_column = c; have_score = true; continue; }
                if (tok[c] == "cost") { cost_column = c; have_cost = true; continue; }
                auto idx = space.index_of(tok[c]);
                if (!idx) throw ParseError(line_no, "unknown column '" + tok[c] + "'");
                if (seen[*idx]) throw ParseError(line_no, "duplicate column '" + tok[c] + "'");
                seen[*idx] = true;
            }
            if (!have_score || !have_cost)
                throw ParseError(line_no, "header must contain 'score' and 'cost'");
            column_of.assign(tok.size(), 0);
            for (std::size_t c = 0; c != tok.size(); ++c)
                if (c != score_column && c != cost_column) column_of[c] = *space.index_of(tok[c]);
            have_header = true;
            continue;
        }

        if (tok.size() != column_of.size())
            throw ParseError(line_no, "expected " + std::to_string(column_of.size()) + " fields, got " +
                                          std::to_string(tok.size()));
        std::vector<ParamValue> values(space.size());
        for (std::size_t c = 0; c != tok.size(); ++c) {
            if (c == score_column || c == cost_column) continue;
            const auto i = column_of[c];
            const auto &def = space[i];
            if (def.is_categorical()) {
                values[i] = tok[c];
            } else if (def.is_integer()) {
                std::int64_t v;
                auto [end, ec] = std::from_chars(tok[c].data(), tok[c].data() + tok[c].size(), v);
                if (ec != std::errc() || end != tok[c].data() + tok[c].size())
                    throw ParseError(line_no, "expected an integer for '" + def.name + "', got '" + tok[c] + "'");
                values[i] = v;
            } else {
                values[i] = to_double(tok[c], line_no, def.name.c_str());
            }
        }
        try {
            rows.push_back({ Configuration(space, std::move(values)), to_double(tok[score_column], line_no, "score"),
                             to_double(tok[cost_column], line_no, "cost") });
        } catch (const ValidationError &e) {
            throw ParseError(line_no, e.what());
        }
    }
    if (!have_header)
        throw ParseError(0, "empty table");
    return TabularObjective(space, std::move(rows));
}

/*======================================================================================================================
 * External command
 *====================================================================================================================*/

namespace {

std::string shell_quote(const std::string &s)
{
    const bool plain = !s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '.' || c == '_' || c == '+' || c == '-';
    });
    if (plain) return s;
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    return out + "'";
}

std::optional<double> parse_score_line(const std::string &output)
{
    std::istringstream in(output);
    std::string last;
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        if (!line.empty()) last = line;
    }
    constexpr std::string_view prefix = "score=";
    if (last.rfind(prefix, 0) != 0) return std::nullopt;
    double v;
    const char *first = last.data() + prefix.size(), *end = last.data() + last.size();
    auto [ptr, ec] = std::from_chars(first, end, v);
    if (ec != std::errc() || ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

} // namespace

CommandObjective::CommandObjective(SearchSpace space, std::string command_template, std::chrono::milliseconds timeout)
    : space_(std::move(space)), template_(std::move(command_template)), timeout_(timeout)
{
    if (template_.empty())
        throw ValidationError("command", "command template is empty");
    if (timeout_.count() <= 0)
        throw ValidationError("timeout", "timeout must be positive");
}

std::string CommandObjective::render(const Configuration &config) const
{
    std::string out = template_;
    for (std::size_t i = 0; i != space_.size(); ++i) {
        const std::string placeholder = "{" + space_[i].name + "}";
        const std::string value = shell_quote(to_string(config[i]));
        for (auto pos = out.find(placeholder); pos != std::string::npos;
             pos = out.find(placeholder, pos + value.size()))
            out.replace(pos, placeholder.size(), value);
    }
    return out;
}

Evaluation CommandObjective::evaluate(const Configuration &config)
{
    using Clock = std::chrono::steady_clock;
    const std::string command = render(config);
    const auto start = Clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(Clock::now() - start).count(); };

    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0)
        return Evaluation::failed(Evaluation::Failure::Spawn, std::string("pipe: ") + std::strerror(errno));

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, fds[1], STDOUT_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    const char *argv[] = { "/bin/sh", "-c", command.c_str(), nullptr };
    pid_t pid;
    const int rc = posix_spawn(&pid, "/bin/sh", &actions, &attr, const_cast<char **>(argv), environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    ::close(fds[1]);
    if (rc != 0) {
        ::close(fds[0]);
        return Evaluation::failed(Evaluation::Failure::Spawn, std::string("spawn: ") + std::strerror(rc));
    }

    std::string output;
    bool timed_out = false;
    const auto deadline = start + timeout_;
    for (;;) {
        const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
        if (remaining <= 0) {
            timed_out = true;
            break;
        }
        pollfd p{ fds[0], POLLIN, 0 };
        const int ready = ::poll(&p, 1, int(std::min<long long>(remaining, 1000)));
        if (ready < 0 && errno == EINTR) continue;
        if (ready <= 0) continue;
        char buf[4096];
        const ssize_t n = ::read(fds[0], buf, sizeof buf);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) break;
        output.append(buf, std::size_t(n));
    }
    ::close(fds[0]);

    if (timed_out) {
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, nullptr, 0);
        return Evaluation::failed(Evaluation::Failure::Timeout,
                                  "timed out after " + std::to_string(timeout_.count()) + " ms", elapsed());
    }

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) { }
    const double cost = elapsed();
    if (WIFSIGNALED(status))
        return Evaluation::failed(Evaluation::Failure::Exit, "killed by signal " + std::to_string(WTERMSIG(status)),
                                  cost);
    if (WEXITSTATUS(status) != 0)
        return Evaluation::failed(Evaluation::Failure::Exit, "exit status " + std::to_string(WEXITSTATUS(status)),
                                  cost);
    auto score = parse_score_line(output);
    if (!score)
        return Evaluation::failed(Evaluation::Failure::Parse, "last output line is not 'score=<real>'", cost);
    return Evaluation::success(*score, cost);
}

/*======================================================================================================================
 * Decorators
 *====================================================================================================================*/

NoisyObjective::NoisyObjective(std::unique_ptr<Objective> inner, double sigma, std::uint64_t seed)
    : inner_(std::move(inner)), sigma_(sigma), rng_(seed)
{
    if (!(sigma_ >= 0) || !std::isfinite(sigma_))
        throw ValidationError("noise_sigma", "noise sigma must be finite and >= 0");
}

Evaluation NoisyObjective::evaluate(const Configuration &config)
{
    auto e = inner_->evaluate(config);
    if (e.ok() && sigma_ > 0)
        *e.score += std::normal_distribution<double>(0.0, sigma_)(rng_);
    return e;
}

Evaluation NegatedObjective::evaluate(const Configuration &config)
{
    auto e = inner_->evaluate(config);
    if (e.ok()) *e.score = -*e.score;
    return e;
}

} // namespace pchpo
