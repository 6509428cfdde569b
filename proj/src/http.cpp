#include "pchpo/service.hpp"

#include <httplib.h>

#include <charconv>
#include <thread>

namespace pchpo {

namespace {

void reply(httplib::Response &res, int status, const Json &body)
{
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

Json error_body(const std::string &field, const std::string &message)
{
    return Json{ { "field", field }, { "message", message } };
}

} // namespace

struct Server::Impl
{
    Runner &runner;
    httplib::Server http;
    std::thread thread;

    explicit Impl(Runner &r) : runner(r) { routes(); }

    void submit(httplib::Response &res, UserKnowledge knowledge)
    {
        if (runner.submit(std::move(knowledge)) == Runner::Submit::Completed) {
            reply(res, 409, error_body("$", "the run has completed"));
            return;
        }
        reply(res, 202, Json{ { "accepted", true } });
    }

    void routes()
    {
        http.set_default_headers({ { "Access-Control-Allow-Origin", "*" } });
        http.Options(R"(/.*)", [](const httplib::Request &, httplib::Response &res) {
            res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.status = 204;
        });

        http.Get("/status", [this](const httplib::Request &, httplib::Response &res) {
            const auto snapshot = runner.status();
            reply(res, 200, to_json(runner.space(), *snapshot));
        });

        http.Get("/trials", [this](const httplib::Request &req, httplib::Response &res) {
            std::size_t from = 0;
            if (req.has_param("from")) {
                const std::string text = req.get_param_value("from");
                auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), from);
                if (ec != std::errc() || end != text.data() + text.size()) {
                    reply(res, 400, error_body("from", "expected a non-negative integer"));
                    return;
                }
            }
            Json body = Json::array();
            for (auto &record : runner.trials(from))
                body.push_back(std::move(record));
            reply(res, 200, body);
        });

        http.Get("/space", [this](const httplib::Request &, httplib::Response &res) {
            reply(res, 200, describe_space(runner.space()));
        });

        http.Post("/knowledge", [this](const httplib::Request &req, httplib::Response &res) {
            UserKnowledge knowledge;
            try {
                knowledge = runner.parse_live(req.body);
            } catch (const ValidationError &e) {
                reply(res, 400, error_body(e.field(), e.detail()));
                return;
            } catch (const ParseError &e) {
                reply(res, 400, error_body("$", e.what()));
                return;
            }
            submit(res, std::move(knowledge));
        });

        http.Delete("/knowledge", [this](const httplib::Request &, httplib::Response &res) {
            submit(res, UserKnowledge{});
        });
    }
};

Server::Server(Runner &runner) : impl_(std::make_unique<Impl>(runner)) { }

Server::~Server()
{
    stop();
}

int Server::start(const std::string &host, int port)
{
    if (impl_->thread.joinable())
        throw std::logic_error("server already started");
    int bound = port;
    if (port == 0) {
        bound = impl_->http.bind_to_any_port(host);
    } else if (!impl_->http.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0)
        throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
    impl_->thread = std::thread([this] { impl_->http.listen_after_bind(); });
    impl_->http.wait_until_ready();
    return bound;
}

void Server::stop()
{
    if (!impl_->thread.joinable())
        return;
    impl_->http.stop();
    impl_->thread.join();
}

} // namespace pchpo
