#pragma once

namespace bnn {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace bnn
