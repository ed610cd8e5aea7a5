#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace hisem {

/// Lowercases ASCII letters, turns every ASCII punctuation character into a
/// space, and splits on whitespace.
std::vector<std::string> tokenize(std::string_view sentence);

std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ");

}  // namespace hisem
