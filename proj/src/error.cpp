#include "dualad/error.hpp"

namespace dualad {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return "configuration error";
    case ErrorKind::input: return "input error";
    case ErrorKind::layout: return "layout error";
    case ErrorKind::decode: return "decode error";
    case ErrorKind::numeric: return "numeric error";
    case ErrorKind::calibration: return "calibration error";
    case ErrorKind::state: return "state error";
    case ErrorKind::contract: return "contract violation";
    case ErrorKind::evaluation: return "evaluation error";
  }
  return "error";
}

int exit_code(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::input:
    case ErrorKind::layout:
    case ErrorKind::decode: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::calibration: return 5;
    case ErrorKind::state:
    case ErrorKind::contract:
    case ErrorKind::evaluation: return 6;
  }
  return 1;
}

}  // namespace dualad
