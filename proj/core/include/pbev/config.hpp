#pragma once

#include <stdexcept>
#include <string>

#include "pbev/geometry.hpp"

namespace pbev {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Grid, pillar spec and camera rig loaded together from one JSON file.
struct WorldConfig {
    BevGrid grid;
    PillarSpec pillar;
    CameraRig rig;

    static WorldConfig standard() {
        return {BevGrid::standard(), PillarSpec::standard(), CameraRig::synthetic()};
    }
};

// Schema:
// {"grid":{"x_extent","y_extent","resolution"},
//  "pillar":{"z_min","z_max","n_z"},
//  "cameras":[{"id","K":[9 row-major],"R":[9],"t":[3],"feat_w","feat_h",
//              optional "img_w","img_h"}]}
// When img_w/img_h are present, K is taken at image resolution and gets
// rescaled to feature-pixel units by (feat_w/img_w, feat_h/img_h).
// Missing or malformed fields throw ConfigError.
WorldConfig load_world_config(const std::string& path);
void save_world_config(const WorldConfig& config, const std::string& path);

} // namespace pbev
