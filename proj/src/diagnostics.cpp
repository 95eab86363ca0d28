#include "lvmoe/diagnostics.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace lvmoe {

namespace {

std::mutex sink_mutex;

WarningSink& sink_ref() {
  static WarningSink sink = [](const std::string& msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  std::lock_guard lock(sink_mutex);
  return std::exchange(sink_ref(), std::move(sink));
}

void warn(const std::string& message) {
  std::lock_guard lock(sink_mutex);
  if (sink_ref()) sink_ref()(message);
}

}  // namespace lvmoe
