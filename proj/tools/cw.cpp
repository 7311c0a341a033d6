#include <csignal>
#include <iostream>

#include "cw/cli.hpp"

namespace {

extern "C" void on_signal(int) { cw::cli::stop_flag().store(true); }

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  return cw::cli::run(argc, argv, std::cout, std::cerr);
}
