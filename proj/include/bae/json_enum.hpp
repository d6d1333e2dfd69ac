// SPDX-License-Identifier: Apache-2.0
//
// Enum <-> string JSON mapping that rejects unknown names.
#pragma once

#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "bae/error.hpp"

#define BAE_JSON_ENUM(ENUM_TYPE, ...)                                                                      \
    [[maybe_unused]] inline void to_json(nlohmann::json& j, const ENUM_TYPE& e) {                          \
        static const std::pair<ENUM_TYPE, const char*> names[] = __VA_ARGS__;                              \
        for (const auto& [value, name] : names)                                                            \
            if (value == e) {                                                                              \
                j = name;                                                                                  \
                return;                                                                                    \
            }                                                                                              \
        throw std::logic_error("unnamed " #ENUM_TYPE " value");                                            \
    }                                                                                                      \
    [[maybe_unused]] inline void from_json(const nlohmann::json& j, ENUM_TYPE& e) {                        \
        static const std::pair<ENUM_TYPE, const char*> names[] = __VA_ARGS__;                              \
        if (j.is_string())                                                                                 \
            for (const auto& [value, name] : names)                                                        \
                if (j.get_ref<const std::string&>() == name) {                                             \
                    e = value;                                                                             \
                    return;                                                                                \
                }                                                                                          \
        throw ::bae::ConfigError("unknown " #ENUM_TYPE " " + j.dump());                                    \
    }
