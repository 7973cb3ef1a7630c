#include <bezgraph/service.hpp>

#include <bezgraph/generators.hpp>

#include <httplib.h>

#include <stdexcept>

namespace bezgraph
{
namespace
{
constexpr const char* kFrameContentType = "application/x-bezgraph-frames";

void reply(httplib::Response& res, int status, const Json& body)
{
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

std::string graphKey(const Scenario& s)
{
  const Json doc = scenarioToJson(s);
  Json key;
  for (const char* k : {"spec", "Xd", "U", "tube", "graph", "start", "goal"})
  {
    if (doc.contains(k))
    {
      key[k] = doc.at(k);
    }
  }
  key["w_max"] = s.sim.w_max;
  key["gains"] = s.sim.gains;
  key["dt"] = 1.0 / s.rates.sim_hz;
  key["h"] = s.mpc.h;
  return key.dump();
}

double numberField(const Json& doc, const char* key, double fallback)
{
  if (!doc.contains(key))
  {
    return fallback;
  }
  if (!doc.at(key).is_number())
  {
    throw ScenarioError(std::string(key) + ": expected a number");
  }
  return doc.at(key).get<double>();
}
}  // namespace

Json errorBody(const std::string& code, const std::string& message)
{
  std::string field;
  std::string text = message;
  const auto colon = message.find(": ");
  if (colon != std::string::npos && message.find(' ') >= colon)
  {
    field = message.substr(0, colon);
    text = message.substr(colon + 2);
  }
  return {{"error", {{"code", code}, {"field", field}, {"message", text}}}};
}

Service::Service(ServiceOptions options)
    : options_(std::move(options)), server_(std::make_unique<httplib::Server>())
{
  routes();
}

Service::~Service() { stop(); }

std::shared_ptr<LiveSession> Service::session(const std::string& id) const
{
  std::lock_guard<std::mutex> lock(mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

std::shared_ptr<LiveSession> Service::create(const Scenario& scenario, const LiveOptions& options)
{
  scenario.validate();
  const std::string key = graphKey(scenario);
  std::shared_ptr<const BezierGraph> graph;
  std::string id;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    const auto it = graphs_.find(key);
    if (it != graphs_.end())
    {
      graph = it->second;
    }
    id = "s" + std::to_string(next_id_++);
  }
  if (!graph)
  {
    graph = buildScenarioGraph(scenario);
    std::lock_guard<std::mutex> lock(mutex_);
    graphs_.emplace(key, graph);
  }
  auto live = std::make_shared<LiveSession>(id, scenario, graph, options);
  std::lock_guard<std::mutex> lock(mutex_);
  sessions_.emplace(id, live);
  return live;
}

void Service::routes()
{
  auto& srv = *server_;

  srv.Get("/health", [](const httplib::Request&, httplib::Response& res) {
    reply(res, 200, {{"status", "ok"}, {"frame_schema", kFrameSchema}, {"frame_version", kFrameVersion}});
  });

  srv.Get("/sessions", [this](const httplib::Request&, httplib::Response& res) {
    Json list = Json::array();
    std::lock_guard<std::mutex> lock(mutex_);
    for (const auto& [id, s] : sessions_)
    {
      list.push_back({{"id", id}, {"status", s->status()}});
    }
    reply(res, 200, {{"sessions", list}});
  });

  srv.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
    Json doc;
    try
    {
      doc = Json::parse(req.body);
    }
    catch (const std::exception& e)
    {
      reply(res, 400, errorBody("parse", std::string("body: ") + e.what()));
      return;
    }
    try
    {
      LiveOptions opts;
      opts.pace = options_.pace;
      Scenario scenario;
      if (doc.is_object() && (doc.contains("scenario") || doc.contains("preset")))
      {
        opts.pace = numberField(doc, "pace", opts.pace);
        if (opts.pace < 0.0)
        {
          throw ScenarioError("pace: must be >= 0");
        }
        if (doc.contains("paused"))
        {
          opts.start_paused = doc.at("paused").get<bool>();
        }
        if (doc.contains("preset"))
        {
          const auto seed = static_cast<std::uint64_t>(numberField(doc, "seed", 1.0));
          scenario = presetScenario(doc.at("preset").get<std::string>(), seed);
        }
        else
        {
          scenario = scenarioFromJson(doc.at("scenario"));
        }
        if (doc.contains("disturbance_seed"))
        {
          scenario.sim.disturbance_seed =
              static_cast<std::uint64_t>(numberField(doc, "disturbance_seed", 0.0));
        }
      }
      else
      {
        scenario = scenarioFromJson(doc);
      }
      const auto live = create(scenario, opts);
      reply(res, 201,
            {{"id", live->id()},
             {"frames", "/sessions/" + live->id() + "/frames"},
             {"commands", "/sessions/" + live->id() + "/commands"}});
    }
    catch (const std::invalid_argument& e)
    {
      reply(res, 400, errorBody("validation", e.what()));
    }
    catch (const Json::exception& e)
    {
      reply(res, 400, errorBody("validation", e.what()));
    }
    catch (const std::exception& e)
    {
      reply(res, 500, errorBody("internal", e.what()));
    }
  });

  srv.Get(R"(/sessions/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto live = session(req.matches[1]);
    if (!live)
    {
      reply(res, 404, errorBody("not_found", "id: unknown session"));
      return;
    }
    reply(res, 200, live->snapshot());
  });

  srv.Delete(R"(/sessions/([A-Za-z0-9]+))", [this](const httplib::Request& req, httplib::Response& res) {
    std::shared_ptr<LiveSession> live;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      const auto it = sessions_.find(req.matches[1]);
      if (it != sessions_.end())
      {
        live = it->second;
        sessions_.erase(it);
      }
    }
    if (!live)
    {
      reply(res, 404, errorBody("not_found", "id: unknown session"));
      return;
    }
    live->stop();
    reply(res, 200, {{"id", live->id()}, {"status", "ended"}});
  });

  srv.Post(R"(/sessions/([A-Za-z0-9]+)/commands)",
           [this](const httplib::Request& req, httplib::Response& res) {
             const auto live = session(req.matches[1]);
             if (!live)
             {
               reply(res, 404, errorBody("not_found", "id: unknown session"));
               return;
             }
             try
             {
               const Command c = commandFromJson(Json::parse(req.body));
               live->submit(c);
               reply(res, 202, {{"accepted", true}, {"command", commandToJson(c)}});
             }
             catch (const Json::parse_error& e)
             {
               reply(res, 400, errorBody("parse", std::string("body: ") + e.what()));
             }
             catch (const Json::exception& e)
             {
               reply(res, 400, errorBody("validation", e.what()));
             }
             catch (const std::invalid_argument& e)
             {
               const bool ended = live->ended();
               reply(res, ended ? 409 : 400, errorBody(ended ? "ended" : "validation", e.what()));
             }
             catch (const std::exception& e)
             {
               reply(res, 500, errorBody("internal", e.what()));
             }
           });

  srv.Get(R"(/sessions/([A-Za-z0-9]+)/frames)",
          [this](const httplib::Request& req, httplib::Response& res) {
            const auto live = session(req.matches[1]);
            if (!live)
            {
              reply(res, 404, errorBody("not_found", "id: unknown session"));
              return;
            }
            long limit = -1;
            if (req.has_param("max"))
            {
              limit = std::stol(req.get_param_value("max"));
            }
            auto box = live->subscribe();
            auto sent = std::make_shared<long>(0);
            const int poll = options_.stream_poll_ms;
            res.set_header("Cache-Control", "no-store");
            res.set_chunked_content_provider(
                kFrameContentType,
                [box, sent, limit, poll](std::size_t, httplib::DataSink& sink) {
                  if (!sink.is_writable())
                  {
                    return false;
                  }
                  const auto msg = box->take(poll);
                  if (msg)
                  {
                    if (!sink.write(msg->data(), msg->size()))
                    {
                      return false;
                    }
                    ++*sent;
                  }
                  if (box->closed() || (limit >= 0 && *sent >= limit))
                  {
                    sink.done();
                  }
                  return true;
                },
                [live, box](bool) { live->unsubscribe(box); });
          });
}

int Service::start()
{
  int port = options_.port;
  if (port == 0)
  {
    port = server_->bind_to_any_port(options_.host);
  }
  else if (!server_->bind_to_port(options_.host, port))
  {
    port = -1;
  }
  if (port < 0)
  {
    throw std::runtime_error("service: cannot bind " + options_.host + ":" +
                             std::to_string(options_.port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port;
}

void Service::listen()
{
  if (!server_->listen(options_.host, options_.port))
  {
    throw std::runtime_error("service: cannot listen on " + options_.host + ":" +
                             std::to_string(options_.port));
  }
}

void Service::stop()
{
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    sessions.swap(sessions_);
  }
  for (auto& [id, s] : sessions)
  {
    s->stop();
  }
  if (server_)
  {
    server_->stop();
  }
  if (thread_.joinable())
  {
    thread_.join();
  }
}
}  // namespace bezgraph
