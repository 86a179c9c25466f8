#include "vgkit/errors.hpp"

namespace vgkit {

std::string Error::describe() const {
  std::string line = "error=";
  line += kind();
  if (!sample_id_.empty()) line += " sample_id=" + sample_id_;
  if (!path_.empty()) line += " file=" + path_;
  line += " detail=\"";
  for (const char c : std::string(what())) {
    if (c == '\n') {
      line += ' ';
    } else if (c == '"') {
      line += '\'';
    } else {
      line += c;
    }
  }
  line += '"';
  return line;
}

}  // namespace vgkit
