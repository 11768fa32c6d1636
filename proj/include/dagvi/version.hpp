#pragma once

namespace dagvi {

inline constexpr const char* kArtifactVersion = "dagvi 0.1.0";

}  // namespace dagvi
