#pragma once

#include <json.hpp>

#include "coopir/degrade.hpp"
#include "coopir/kinds.hpp"

namespace coopir {

using Json = nlohmann::json;

Json kindset_to_json(KindSet set);  // array of kind names in enum order
KindSet kindset_from_json(const Json& j);

Json params_to_json(const degrade::DegradationParams& params);
// Missing fields keep their defaults; unknown fields throw FormatError.
degrade::DegradationParams params_from_json(DegradationKind kind, const Json& j);

Json spec_to_json(const degrade::DegradationSpec& spec);
degrade::DegradationSpec spec_from_json(const Json& j);

Json ranges_to_json(const degrade::DegradationRanges& ranges);
// Overlays fields present in `j` onto `base`; unknown keys throw ConfigError.
degrade::DegradationRanges ranges_from_json(const Json& j, degrade::DegradationRanges base = {});

}  // namespace coopir
