#include "kads/log.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace kads::log {
namespace {

Level from_env() {
  const char* env = std::getenv("KADS_LOG");
  if (env == nullptr) return Level::Info;
  const std::string v(env);
  if (v == "debug") return Level::Debug;
  if (v == "warn") return Level::Warn;
  if (v == "error") return Level::Error;
  if (v == "off") return Level::Off;
  return Level::Info;
}

std::atomic<Level>& current() {
  static std::atomic<Level> level{from_env()};
  return level;
}

}  // namespace

Level threshold() { return current().load(); }
void set_threshold(Level level) { current().store(level); }

void write(Level level, std::string_view message) {
  if (level < threshold()) return;
  static constexpr const char* kTags[] = {"debug", "info", "warning", "error"};
  std::cerr << "[" << kTags[static_cast<int>(level)] << "] " << message << '\n';
}

}  // namespace kads::log
