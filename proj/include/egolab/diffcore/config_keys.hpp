#pragma once

#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "egolab/diffcore/tensor.hpp"

namespace egolab {

/// Rejects keys outside `allowed` so typos in config files surface early.
inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& section) {
    if (!j.is_object()) throw Error(section + ": expected an object");
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || k == a;
        if (!ok) throw Error(section + ": unknown key '" + k + "'");
    }
}

}  // namespace egolab
