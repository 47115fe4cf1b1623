#pragma once

#include <stdexcept>
#include <string>

namespace ldpbench {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ldpbench
