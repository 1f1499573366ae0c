// wetrace: operator entry points for the proximity-tracing reference stack.
//
//   simulate           run a scenario file, write metrics + event log
//   scenario-validate  parse and validate a scenario file
//   backend-serve      run the relay service
//   device-agent       drive one device state file against a live relay
//   bench-decrypt      measure prefix-filtered decryption at scale
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "wetrace/backend_service.hpp"
#include "wetrace/device.hpp"
#include "wetrace/simnet.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

void write_file(const std::filesystem::path& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << data;
}

int cmd_simulate(const std::string& scenario_path, const std::string& out_dir,
                 const std::string& export_dir, bool json_output) {
    wetrace::sim::Scenario scenario;
    try {
        scenario = wetrace::sim::Scenario::from_file(scenario_path);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    const wetrace::sim::SimResult result = wetrace::sim::run(scenario);

    std::filesystem::create_directories(out_dir);
    write_file(std::filesystem::path(out_dir) / "metrics.json",
               result.metrics.to_json().dump(2) + "\n");
    write_file(std::filesystem::path(out_dir) / "events.log",
               result.event_log);
    if (!export_dir.empty()) {
        std::filesystem::create_directories(export_dir);
        for (const auto& [id, state] : result.device_states) {
            write_file(std::filesystem::path(export_dir) / (id + ".json"),
                       state);
        }
    }

    if (json_output) {
        std::cout << result.metrics.to_json().dump() << "\n";
    } else {
        std::cout << result.metrics.to_table();
    }
    return kExitOk;
}

int cmd_scenario_validate(const std::string& scenario_path, bool json_output) {
    try {
        wetrace::sim::Scenario::from_file(scenario_path);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    if (json_output) {
        std::cout << R"({"valid":true})" << "\n";
    } else {
        std::cout << "scenario ok\n";
    }
    return kExitOk;
}

int cmd_backend_serve(const std::string& listen, int64_t retention,
                      int difficulty, const std::string& token,
                      int64_t purge_interval) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) {
        std::cerr << "error: --listen expects HOST:PORT\n";
        return kExitValidation;
    }
    const std::string host = listen.substr(0, colon);
    int port = 0;
    try {
        port = std::stoi(listen.substr(colon + 1));
    } catch (const std::exception&) {
        std::cerr << "error: --listen expects HOST:PORT\n";
        return kExitValidation;
    }

    wetrace::BackendStore::Options options;
    options.retention = retention;
    options.difficulty = difficulty;
    if (!token.empty()) {
        options.token = token;
    }
    wetrace::BackendService service(options, purge_interval);
    if (!service.start(host, port)) {
        std::cerr << "error: failed to bind " << listen << "\n";
        return kExitRuntime;
    }
    std::cerr << "listening on " << host << ":" << service.port()
              << " (difficulty " << difficulty << ", retention " << retention
              << " s)\n";
    service.wait();
    return kExitOk;
}

nlohmann::json payload_to_json(const wetrace::NotificationPayload& p) {
    nlohmann::json j;
    switch (p.status) {
        case wetrace::InfectionState::not_infected: j["status"] = "not_infected"; break;
        case wetrace::InfectionState::close_contact: j["status"] = "close_contact"; break;
        case wetrace::InfectionState::infected: j["status"] = "infected"; break;
    }
    if (p.timestamp) {
        j["timestamp"] = *p.timestamp;
    }
    if (p.latitude_q) {
        j["latitude_q"] = *p.latitude_q;
        j["longitude_q"] = *p.longitude_q;
    }
    return j;
}

int cmd_device_agent(const std::string& state_path, std::string backend_url,
                     const std::string& command, int level,
                     const std::string& token, int difficulty,
                     bool json_output) {
    if (backend_url.empty()) {
        if (const char* env = std::getenv("WETRACE_BACKEND_URL")) {
            backend_url = env;
        }
    }
    const int64_t now = std::time(nullptr);

    std::optional<wetrace::Device> device;
    if (std::filesystem::exists(state_path)) {
        std::ifstream in(state_path, std::ios::binary);
        std::stringstream buffer;
        buffer << in.rdbuf();
        try {
            device.emplace(wetrace::Device::load_state(buffer.str()));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitValidation;
        }
    } else {
        device.emplace(wetrace::DeviceConfig{}, wetrace::MasterSeed::generate());
        write_file(state_path, device->save_state());
        std::cerr << "initialized new device state at " << state_path << "\n";
    }

    const auto save = [&] { write_file(state_path, device->save_state()); };

    if (command == "show") {
        nlohmann::json j;
        switch (device->status().state) {
            case wetrace::InfectionState::not_infected: j["status"] = "not_infected"; break;
            case wetrace::InfectionState::close_contact: j["status"] = "close_contact"; break;
            case wetrace::InfectionState::infected: j["status"] = "infected"; break;
        }
        j["report_spent"] = device->status().report_spent;
        j["encounters"] = device->encounters().size();
        j["poll_cursor"] = device->poll_cursor();
        if (json_output) {
            std::cout << j.dump() << "\n";
        } else {
            std::cout << "status: " << j["status"].get<std::string>()
                      << "\nreport_spent: "
                      << (device->status().report_spent ? "yes" : "no")
                      << "\nencounters: " << device->encounters().size()
                      << "\npoll_cursor: " << device->poll_cursor() << "\n";
        }
        return kExitOk;
    }

    if (backend_url.empty()) {
        std::cerr << "error: no backend url (use --backend or "
                     "WETRACE_BACKEND_URL)\n";
        return kExitValidation;
    }
    wetrace::BackendClient client(backend_url);

    if (command == "report") {
        std::vector<wetrace::Bytes> messages;
        try {
            messages = device->build_report(
                wetrace::disclosure_level_from_int(level), now);
        } catch (const std::runtime_error& e) {
            std::cerr << "error: " << e.what() << "\n";
            return kExitValidation;
        }
        if (messages.empty()) {
            std::cerr << "warning: no contacts to notify\n";
            save();
            if (json_output) {
                std::cout << R"({"published":0})" << "\n";
            } else {
                std::cout << "published 0 messages\n";
            }
            return kExitOk;
        }
        std::optional<std::string> bearer;
        if (!token.empty()) {
            bearer = token;
        }
        const auto reply = client.publish(messages, difficulty, bearer);
        if (!reply.ok) {
            std::cerr << "error: " << reply.error << "\n";
            return kExitRuntime;
        }
        save();
        if (json_output) {
            std::cout << nlohmann::json{{"published", reply.accepted}}.dump()
                      << "\n";
        } else {
            std::cout << "published " << reply.accepted << " messages\n";
        }
        return kExitOk;
    }

    if (command == "poll") {
        const auto reply = client.poll(device->poll_cursor());
        if (!reply.ok) {
            std::cerr << "error: " << reply.error << "\n";
            return kExitRuntime;
        }
        const auto outcome = device->poll_and_decrypt(reply.messages, now);
        device->set_poll_cursor(reply.cursor);
        save();
        nlohmann::json j;
        j["messages"] = reply.messages.size();
        j["attempts"] = outcome.attempts;
        auto& decoded = j["decoded"] = nlohmann::json::array();
        for (const auto& payload : outcome.decoded) {
            decoded.push_back(payload_to_json(payload));
        }
        if (json_output) {
            std::cout << j.dump() << "\n";
        } else {
            std::cout << "fetched " << reply.messages.size() << " messages, "
                      << outcome.decoded.size() << " decoded ("
                      << outcome.attempts << " decryption attempts)\n";
            for (const auto& payload : outcome.decoded) {
                std::cout << "notification: " << payload_to_json(payload).dump()
                          << "\n";
            }
        }
        return kExitOk;
    }

    std::cerr << "error: unknown agent command '" << command << "'\n";
    return kExitValidation;
}

int cmd_bench_decrypt(uint64_t n_messages, uint64_t n_keys, int prefix_bits,
                      const std::string& cipher_name, uint64_t seed,
                      bool json_output) {
    if (n_messages == 0 || n_keys == 0) {
        std::cerr << "error: --messages and --keys must be positive\n";
        return kExitValidation;
    }
    const wetrace::Cipher& cipher = cipher_name == "stub"
                                        ? wetrace::stub_cipher()
                                        : wetrace::sodium_cipher();

    wetrace::SeededRandom rng(seed);
    const auto master = wetrace::MasterSeed::generate(rng);
    std::vector<wetrace::WindowKeyPair> keys;
    keys.reserve(n_keys);
    for (uint64_t i = 0; i < n_keys; ++i) {
        keys.push_back(wetrace::derive_window_keypair(master, i));
    }

    wetrace::NotificationPayload payload;
    payload.status = wetrace::InfectionState::infected;
    payload.timestamp = 1700000000;
    payload.latitude_q = 473666;
    payload.longitude_q = 85500;

    const uint64_t match_at = rng.below(n_messages);
    std::vector<wetrace::Bytes> messages;
    messages.reserve(n_messages);
    for (uint64_t i = 0; i < n_messages; ++i) {
        wetrace::PublicKey recipient;
        if (i == match_at) {
            recipient = keys[rng.below(n_keys)].public_key;
        } else {
            rng.fill(recipient.data(), recipient.size());
        }
        messages.push_back(
            wetrace::seal_notification(recipient, payload, prefix_bits, rng,
                                       cipher)
                .to_bytes());
    }

    const auto start = std::chrono::steady_clock::now();
    const auto result = wetrace::filter_and_decrypt(messages, keys, cipher);
    const auto elapsed = std::chrono::duration<double>(
                             std::chrono::steady_clock::now() - start)
                             .count();

    const double unfiltered =
        static_cast<double>(n_messages) * static_cast<double>(n_keys);
    const double reduction =
        1.0 - static_cast<double>(result.attempts) / unfiltered;

    nlohmann::json j;
    j["cipher"] = cipher.name();
    j["messages"] = n_messages;
    j["keys"] = n_keys;
    j["prefix_bits"] = prefix_bits;
    j["attempts"] = result.attempts;
    j["attempts_at_zero_bits"] = static_cast<uint64_t>(unfiltered);
    j["reduction_vs_zero_bits"] = reduction;
    j["decoded"] = result.decoded.size();
    j["seconds"] = elapsed;
    if (json_output) {
        std::cout << j.dump() << "\n";
    } else {
        std::cout << "cipher:            " << cipher.name() << "\n"
                  << "messages x keys:   " << n_messages << " x " << n_keys
                  << "\n"
                  << "prefix bits:       " << prefix_bits << "\n"
                  << "attempts:          " << result.attempts << "\n"
                  << "attempts @ 0 bits: " << static_cast<uint64_t>(unfiltered)
                  << "\n"
                  << "reduction:         " << reduction * 100.0 << "%\n"
                  << "decoded:           " << result.decoded.size() << "\n"
                  << "wall time:         " << elapsed << " s\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"WeTrace proximity-tracing reference tools"};
    app.require_subcommand(1);
    bool json_output = false;
    app.add_flag("--json", json_output, "machine-readable output on stdout");

    // simulate
    auto* simulate = app.add_subcommand("simulate", "run a scenario file");
    std::string scenario_path, out_dir = "out", export_dir;
    simulate->add_option("scenario", scenario_path, "scenario JSON file")
        ->required();
    simulate->add_option("--out", out_dir, "output directory");
    simulate->add_option("--export-states", export_dir,
                         "write per-device agent state files here");

    // scenario-validate
    auto* validate =
        app.add_subcommand("scenario-validate", "validate a scenario file");
    std::string validate_path;
    validate->add_option("scenario", validate_path, "scenario JSON file")
        ->required();

    // backend-serve
    auto* serve = app.add_subcommand("backend-serve", "run the relay service");
    std::string listen = "127.0.0.1:8321";
    int64_t retention = 14 * 86400;
    int serve_difficulty = 20;
    std::string serve_token;
    int64_t purge_interval = 60;
    serve->add_option("--listen", listen, "HOST:PORT to bind");
    serve->add_option("--retention", retention, "message retention in seconds");
    serve->add_option("--difficulty", serve_difficulty,
                      "proof-of-work difficulty in bits");
    serve->add_option("--token", serve_token,
                      "accept this bearer token instead of proof-of-work");
    serve->add_option("--purge-interval", purge_interval,
                      "seconds between retention purges");

    // device-agent
    auto* agent = app.add_subcommand("device-agent",
                                     "drive a device against a live relay");
    std::string state_path, backend_url, agent_token;
    std::string agent_command;
    int level = 1;
    int agent_difficulty = 20;
    agent->add_option("--state", state_path, "device state file")->required();
    agent->add_option("--backend", backend_url,
                      "relay base url (default WETRACE_BACKEND_URL)");
    agent->add_option("command", agent_command, "report | poll | show")
        ->required();
    agent->add_option("--level", level, "disclosure level 1..4 for report");
    agent->add_option("--token", agent_token,
                      "bearer token for attested publishing");
    agent->add_option("--difficulty", agent_difficulty,
                      "proof-of-work difficulty expected by the relay");

    // bench-decrypt
    auto* bench = app.add_subcommand(
        "bench-decrypt", "measure prefix-filtered decryption at scale");
    uint64_t n_messages = 10000, n_keys = 1344, bench_seed = 1;
    int prefix_bits = 8;
    std::string cipher_name = "real";
    bench->add_option("--messages", n_messages, "synthetic message count");
    bench->add_option("--keys", n_keys, "derived key count");
    bench->add_option("--prefix-bits", prefix_bits, "prefix tag width 0..32");
    bench->add_option("--cipher", cipher_name, "real | stub")
        ->check(CLI::IsMember({"real", "stub"}));
    bench->add_option("--seed", bench_seed, "deterministic generator seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (simulate->parsed()) {
            return cmd_simulate(scenario_path, out_dir, export_dir,
                                json_output);
        }
        if (validate->parsed()) {
            return cmd_scenario_validate(validate_path, json_output);
        }
        if (serve->parsed()) {
            return cmd_backend_serve(listen, retention, serve_difficulty,
                                     serve_token, purge_interval);
        }
        if (agent->parsed()) {
            return cmd_device_agent(state_path, backend_url, agent_command,
                                    level, agent_token, agent_difficulty,
                                    json_output);
        }
        if (bench->parsed()) {
            if (prefix_bits < 0 || prefix_bits > 32) {
                std::cerr << "error: --prefix-bits must be within 0..32\n";
                return kExitValidation;
            }
            return cmd_bench_decrypt(n_messages, n_keys, prefix_bits,
                                     cipher_name, bench_seed, json_output);
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
