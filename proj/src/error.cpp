#include "organocc/error.hpp"

namespace organocc {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::DegenerateInput: return "degenerate-input";
    case ErrorKind::Topology: return "topology";
    case ErrorKind::Config: return "config";
    case ErrorKind::LabelConflict: return "label-conflict";
    case ErrorKind::FrameMismatch: return "frame-mismatch";
    case ErrorKind::Layout: return "layout";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

}  // namespace organocc
