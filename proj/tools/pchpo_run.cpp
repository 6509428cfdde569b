#include "pchpo/service.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

namespace {

std::atomic<bool> interrupted{ false };

void on_signal(int)
{
    interrupted = true;
}

} // namespace

int main(int argc, char **argv)
{
    pchpo::RunConfig config;
    auto &p = config.params;
    int port = 0;

    CLI::App app{ "Interactive Bayesian hyperparameter optimization with a probabilistic-circuit surrogate" };
    app.add_option("--space", config.space_path, "Search space file (required for table and command objectives)");
    app.add_option("--objective", config.objective,
                   "branin | mixed_synthetic | table:PATH | command:TEMPLATE (placeholders {name})")
        ->capture_default_str();
    app.add_option("--iterations", p.max_iterations, "Number of trials")->capture_default_str();
    app.add_option("--seed", p.seed, "Random seed")->capture_default_str();
    app.add_option("--interactions", config.interactions_path, "Scripted interaction file (JSON)");
    app.add_option("--serve", port, "Serve the HTTP control surface on 127.0.0.1:PORT")
        ->check(CLI::Range(1, 65535));
    app.add_option("--gamma", p.gamma, "Knowledge decay per iteration")->capture_default_str();
    app.add_option("--rho", p.rho, "Gate probability at the interaction iteration")->capture_default_str();
    app.add_option("--refit-every", p.refit_every, "Iterations between surrogate refits")->capture_default_str();
    app.add_option("--init-samples", p.init_samples, "Uniform draws before the first surrogate")
        ->capture_default_str();
    app.add_option("--n-conditions", p.n_conditions, "Conditions drawn from the user prior per iteration")
        ->capture_default_str();
    app.add_option("--b-samples", p.b_samples, "Completions drawn per condition")->capture_default_str();
    app.add_option("--smoothing", p.learn.smoothing, "Pseudo-count per categorical label")->capture_default_str();
    app.add_flag("--minimize", config.minimize, "Minimize the objective instead of maximizing it");
    app.add_option("--log", config.log_path, "Trial log path (JSON lines); standard output when omitted or '-'");
    app.add_option("--noise-sigma", config.noise_sigma, "Gaussian observation noise added to every score")
        ->capture_default_str();
    app.add_option("--timeout", config.command_timeout, "Seconds allowed per command evaluation")
        ->capture_default_str();
    bool exit_when_done = false;
    app.add_flag("--exit-when-done", exit_when_done, "With --serve, exit once the run completes");

    CLI11_PARSE(app, argc, argv);
    if (app.count("--serve"))
        config.serve_port = port;

    pchpo::RunSetup setup;
    try {
        setup = pchpo::prepare_run(config);
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }

    std::ofstream log_file;
    std::ostream *log = &std::cout;
    if (!config.log_path.empty() && config.log_path != "-") {
        log_file.open(config.log_path, std::ios::out | std::ios::trunc);
        if (!log_file) {
            std::cerr << "error: log: cannot write '" << config.log_path << "'\n";
            return 2;
        }
        log = &log_file;
    }

    for (const auto &k : setup.script)
        if (k.received_at >= p.max_iterations)
            std::cerr << "warning: interaction at iteration " << k.received_at << " is past the last iteration "
                      << p.max_iterations - 1 << " and never fires\n";

    const bool minimize = config.minimize;
    pchpo::Runner runner(setup.space, p, std::move(setup.objective), std::move(setup.script), minimize);
    runner.set_log(log);
    runner.set_warnings(&std::cerr);

    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);

    std::unique_ptr<pchpo::Server> server;
    if (config.serve_port) {
        server = std::make_unique<pchpo::Server>(runner);
        try {
            server->start("127.0.0.1", *config.serve_port);
        } catch (const std::exception &e) {
            std::cerr << "error: serve: " << e.what() << '\n';
            return 2;
        }
        std::cerr << "serving on http://127.0.0.1:" << *config.serve_port << '\n';
    }

    while (!interrupted && runner.step()) { }
    if (interrupted) {
        std::cerr << "interrupted at iteration " << runner.optimizer().iteration() << '\n';
        return 130;
    }

    const auto &history = runner.optimizer().history();
    if (auto inc = history.incumbent()) {
        const auto &t = history.trials()[*inc];
        const double score = minimize ? -*t.evaluation.score : *t.evaluation.score;
        std::cerr << "best score " << score << " at iteration " << t.iteration << ": "
                  << pchpo::to_json(runner.space(), t.config).dump() << '\n';
    } else {
        std::cerr << "no successful evaluation\n";
    }

    if (server && !exit_when_done) {
        std::cerr << "run complete; still serving (Ctrl-C to exit)\n";
        while (!interrupted)
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    return 0;
}
