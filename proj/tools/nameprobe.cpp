#include <csignal>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "nameprobe/app.hpp"
#include "nameprobe/demo_mock.hpp"
#include "nameprobe/errors.hpp"
#include "nameprobe/server.hpp"

namespace {

using namespace nameprobe;

int run_probes(const std::string& subcommand, const std::string& config_path, bool mock, bool force) {
  app::AuditConfig config;
  std::vector<std::string> probes;
  try {
    config = app::load_config(config_path);
    probes = app::probes_for(subcommand, config);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::kConfigError;
  }
  const auto result = app::run(config, probes, {mock, force});
  if (!result.run_dir.empty()) std::cout << result.run_dir.string() << "\n";
  for (const auto& f : result.failures) std::cerr << "failure: " << f << "\n";
  return result.exit_code;
}

int verify(const std::string& run_dir) {
  const auto v = app::verify_run(run_dir);
  for (const auto& f : v.findings) std::cerr << f << "\n";
  std::cout << (v.ok ? "consistent" : "INCONSISTENT") << ": " << run_dir << "\n";
  return v.ok ? app::kSuccess : app::kProbeFailure;
}

server::ReferenceServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int serve_mock(const std::string& config_path, const std::string& host, int port) {
  app::AuditConfig config;
  NameBank bank;
  swap::TemplateSet templates;
  try {
    config = app::load_config(config_path);
    bank = load_namebank(config.namebank);
    if (!config.swap.templates.empty()) templates = swap::load_templates(config.swap.templates);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return app::kConfigError;
  }
  server::ServerConfig sc;
  auto model = demo::demo_model(bank);
  sc.models[model->model_id()] = model;
  sc.sentiment = demo::demo_sentiment();
  sc.qa = demo::demo_qa(bank, templates.templates);
  server::ReferenceServer server(std::move(sc));
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "serving demo-mock on http://" << host << ":" << port << "\n" << std::flush;
  server.listen_blocking(host, port);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Given-name grounding audit toolkit"};
  cli.require_subcommand(1);

  std::string config_path;
  bool mock = false;
  bool force = false;
  for (const char* name : {"grounding", "recovery", "sentiment", "swap", "all"}) {
    auto* sub = cli.add_subcommand(name, std::string("Run ") + (std::string(name) == "all" ? "every configured probe" : std::string("the ") + name + " probe"));
    sub->add_option("-c,--config", config_path, "JSON config file")->required();
    sub->add_flag("--mock", mock, "Replace every remote endpoint with the built-in scripted mock");
    sub->add_flag("--force", force, "Recompute even if the run directory is already complete");
  }

  std::string run_dir;
  auto* verify_cmd = cli.add_subcommand("verify", "Recompute a run's aggregates and tables from its detail rows");
  verify_cmd->add_option("run_dir", run_dir, "Run directory")->required();

  std::string host = "127.0.0.1";
  int port = 8377;
  auto* serve = cli.add_subcommand("serve-mock", "Serve the scripted mock over the HTTP wire contracts");
  serve->add_option("-c,--config", config_path, "JSON config file (name bank and templates)")->required();
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");

  try {
    cli.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = cli.exit(e);
    return rc == 0 ? 0 : app::kConfigError;
  }

  try {
    if (verify_cmd->parsed()) return verify(run_dir);
    if (serve->parsed()) return serve_mock(config_path, host, port);
    for (auto* sub : cli.get_subcommands()) return run_probes(sub->get_name(), config_path, mock, force);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return app::kProbeFailure;
  }
  return app::kConfigError;
}
