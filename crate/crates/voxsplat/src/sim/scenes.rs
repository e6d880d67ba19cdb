//! The four bundled scenes. `scenes/*.json` in the repository root are the
//! serialized form of these constructors (regenerate with
//! `cargo run -p voxsplat --example gen_scenes`).

use nalgebra::{UnitQuaternion, Vector3};

use super::{
    ImageSize, LidarSpec, PoseSpec, PrimitiveShape, PrimitiveSpec, PriorSpec, RigCameraSpec,
    SceneSpec, SfmSpec,
};
use crate::formats::FramePoseRecord;

fn yaw_pose(yaw_rad: f64, translation: [f64; 3]) -> PoseSpec {
    let q = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw_rad);
    PoseSpec {
        quaternion: [q.w, q.i, q.j, q.k],
        translation,
    }
}

fn pitch_pose(pitch_rad: f64, translation: [f64; 3]) -> PoseSpec {
    let q = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), pitch_rad);
    PoseSpec {
        quaternion: [q.w, q.i, q.j, q.k],
        translation,
    }
}

/// Front, front-left (+45 deg) and front-right (-45 deg) cameras.
fn standard_rig() -> Vec<RigCameraSpec> {
    let cam = |camera_id: u32, yaw_deg: f64, tx: f64| RigCameraSpec {
        camera_id,
        fx: 260.0,
        fy: 260.0,
        cx: 160.0,
        cy: 120.0,
        mount: yaw_pose(yaw_deg.to_radians(), [tx, 0.0, 0.0]),
    };
    vec![
        cam(0, 0.0, 0.0),
        cam(1, -45.0, -0.5),
        cam(2, 45.0, 0.5),
    ]
}

fn frame(timestamp: f64, yaw_rad: f64, translation: [f64; 3]) -> FramePoseRecord {
    let p = yaw_pose(yaw_rad, translation);
    FramePoseRecord {
        timestamp,
        quaternion: p.quaternion,
        translation: p.translation,
    }
}

fn wobbly_drive(frames: usize, step: f64) -> Vec<FramePoseRecord> {
    (0..frames)
        .map(|k| {
            let kf = k as f64;
            frame(
                kf * 0.5,
                0.06 * (0.7 * kf).sin(),
                [0.35 * (0.9 * kf).sin(), 0.0, step * kf],
            )
        })
        .collect()
}

fn ground(id: u32, size: [f64; 2], center_z: f64, texture_seed: u64) -> PrimitiveSpec {
    PrimitiveSpec {
        id,
        shape: PrimitiveShape::Plane { size },
        // Local z maps to world -y: the normal points up.
        pose: pitch_pose(std::f64::consts::FRAC_PI_2, [0.0, 1.6, center_z]),
        texture_seed,
        albedo: [0.48, 0.46, 0.44],
        track: None,
        lidar_visible: true,
    }
}

fn facing_wall(
    id: u32,
    size: [f64; 2],
    translation: [f64; 3],
    texture_seed: u64,
    albedo: [f32; 3],
) -> PrimitiveSpec {
    PrimitiveSpec {
        id,
        shape: PrimitiveShape::Plane { size },
        // Local z maps to world -z: the normal faces the approaching rig.
        pose: yaw_pose(std::f64::consts::PI, translation),
        texture_seed,
        albedo,
        track: None,
        lidar_visible: true,
    }
}

/// Three textured planes (a street facade, a protruding section and the
/// ground) swept by a sideways drive: every view pair has a wide lateral
/// baseline. The patch-match accuracy scene.
pub fn planar_street() -> SceneSpec {
    SceneSpec {
        seed: 101,
        image: ImageSize {
            width: 320,
            height: 240,
        },
        rig: standard_rig(),
        trajectory: (0..8)
            .map(|k| {
                let kf = k as f64;
                frame(kf * 0.5, 0.05 * (0.9 * kf).sin(), [1.15 * kf, 0.0, 0.0])
            })
            .collect(),
        primitives: vec![
            PrimitiveSpec {
                id: 0,
                shape: PrimitiveShape::Plane {
                    size: [24.0, 11.0],
                },
                pose: pitch_pose(std::f64::consts::FRAC_PI_2, [5.0, 1.6, 4.0]),
                texture_seed: 11,
                albedo: [0.48, 0.46, 0.44],
                track: None,
                lidar_visible: true,
            },
            PrimitiveSpec {
                id: 1,
                shape: PrimitiveShape::Plane {
                    size: [18.0, 4.5],
                },
                pose: yaw_pose(std::f64::consts::PI, [5.0, -0.65, 3.4]),
                texture_seed: 12,
                albedo: [0.62, 0.42, 0.34],
                track: None,
                lidar_visible: true,
            },
            // Protruding facade section: adds occlusion and a second depth.
            PrimitiveSpec {
                id: 2,
                shape: PrimitiveShape::Plane {
                    size: [5.0, 4.5],
                },
                pose: yaw_pose(std::f64::consts::PI - 0.25, [10.0, -0.65, 2.8]),
                texture_seed: 13,
                albedo: [0.36, 0.5, 0.62],
                track: None,
                lidar_visible: true,
            },
        ],
        lidar: LidarSpec {
            rings: 24,
            rays_per_ring: 200,
            elevation_min_deg: -25.0,
            elevation_max_deg: 38.0,
            azimuth_min_deg: -75.0,
            azimuth_max_deg: 75.0,
            max_range: 40.0,
        },
        sfm: Some(SfmSpec {
            samples_per_instance: 220,
            max_views: 4,
        }),
        priors: Some(PriorSpec {
            voxel_size: 0.25,
            neighbor_k: 4,
            sources: vec!["lidar".into(), "sfm".into()],
            exclude_instances: vec![],
            scale_cap: Some(0.35),
            min_thickness: Some(0.12),
        }),
    }
}

/// Ground, back wall, an elevated sign and two boxes, one of which partially
/// occludes the sign; the discriminant scene.
pub fn occluded_sign() -> SceneSpec {
    SceneSpec {
        seed: 202,
        image: ImageSize {
            width: 320,
            height: 240,
        },
        rig: standard_rig(),
        trajectory: wobbly_drive(6, 1.6),
        primitives: vec![
            ground(0, [20.0, 40.0], 20.0, 21),
            facing_wall(1, [20.0, 8.0], [0.0, -2.4, 25.0], 22, [0.55, 0.52, 0.48]),
            facing_wall(2, [2.4, 1.6], [1.5, -2.2, 14.0], 23, [0.75, 0.3, 0.25]),
            PrimitiveSpec {
                id: 3,
                shape: PrimitiveShape::Box {
                    size: [1.2, 1.2, 1.2],
                },
                pose: yaw_pose(0.3, [-2.0, 1.0, 11.0]),
                texture_seed: 24,
                albedo: [0.35, 0.6, 0.35],
                track: None,
                lidar_visible: true,
            },
            PrimitiveSpec {
                id: 4,
                shape: PrimitiveShape::Box {
                    size: [1.0, 2.6, 1.0],
                },
                pose: yaw_pose(-0.2, [2.0, 0.3, 12.0]),
                texture_seed: 25,
                albedo: [0.6, 0.55, 0.3],
                track: None,
                lidar_visible: true,
            },
        ],
        lidar: LidarSpec {
            rings: 14,
            rays_per_ring: 240,
            elevation_min_deg: -25.0,
            elevation_max_deg: 15.0,
            azimuth_min_deg: 0.0,
            azimuth_max_deg: 360.0,
            max_range: 50.0,
        },
        sfm: Some(SfmSpec {
            samples_per_instance: 160,
            max_views: 4,
        }),
        priors: Some(PriorSpec {
            voxel_size: 0.25,
            neighbor_k: 4,
            sources: vec!["lidar".into(), "sfm".into()],
            exclude_instances: vec![],
            scale_cap: Some(0.35),
            min_thickness: Some(0.12),
        }),
    }
}

/// A textured box crossing laterally in front of a static rig; its priors are
/// withheld so the pipeline must rebuild it in the object frame.
pub fn moving_box() -> SceneSpec {
    let frames = 10usize;
    SceneSpec {
        seed: 303,
        image: ImageSize {
            width: 320,
            height: 240,
        },
        rig: standard_rig(),
        // Nearly static rig: a slight sway spreads the LiDAR rings into
        // dense ground coverage without giving same-camera pairs any real
        // baseline.
        trajectory: (0..frames)
            .map(|k| {
                let kf = k as f64;
                frame(
                    kf * 0.5,
                    0.015 * (1.1 * kf).sin(),
                    [0.25 * (0.9 * kf).sin(), 0.0, 0.12 * (1.3 * kf).cos()],
                )
            })
            .collect(),
        primitives: vec![
            ground(0, [20.0, 30.0], 15.0, 31),
            facing_wall(1, [20.0, 6.0], [0.0, -1.4, 20.0], 32, [0.5, 0.5, 0.55]),
            PrimitiveSpec {
                id: 2,
                shape: PrimitiveShape::Box {
                    size: [1.6, 1.6, 1.6],
                },
                pose: PoseSpec::identity(),
                texture_seed: 33,
                albedo: [0.7, 0.35, 0.25],
                track: Some(
                    (0..frames)
                        .map(|k| {
                            let p = yaw_pose(0.0, [-4.5 + k as f64, 0.8, 8.0]);
                            FramePoseRecord {
                                timestamp: k as f64 * 0.5,
                                quaternion: p.quaternion,
                                translation: p.translation,
                            }
                        })
                        .collect(),
                ),
                lidar_visible: true,
            },
        ],
        lidar: LidarSpec {
            rings: 20,
            rays_per_ring: 240,
            elevation_min_deg: -25.0,
            elevation_max_deg: 8.0,
            azimuth_min_deg: 0.0,
            azimuth_max_deg: 360.0,
            max_range: 50.0,
        },
        sfm: Some(SfmSpec {
            samples_per_instance: 160,
            max_views: 4,
        }),
        priors: Some(PriorSpec {
            voxel_size: 0.25,
            neighbor_k: 4,
            sources: vec!["lidar".into(), "sfm".into()],
            exclude_instances: vec![2],
            scale_cap: Some(0.35),
            min_thickness: Some(0.12),
        }),
    }
}

/// An elevated, LiDAR-absorbing sign floating in the gap between two tall
/// scanned buildings. The point cloud knows the sign only through SfM
/// samples, the priors (LiDAR-seeded) miss it entirely, and the sky gap
/// behind it keeps the recovered depth unobstructed.
pub fn sparse_lidar_holes() -> SceneSpec {
    SceneSpec {
        seed: 404,
        image: ImageSize {
            width: 320,
            height: 240,
        },
        rig: standard_rig(),
        trajectory: (0..10)
            .map(|k| {
                let kf = k as f64;
                frame(
                    kf * 0.5,
                    0.05 * (0.8 * kf).sin(),
                    [0.3 * (0.7 * kf).sin(), 0.0, 0.8 * kf],
                )
            })
            .collect(),
        primitives: vec![
            ground(0, [20.0, 36.0], 18.0, 41),
            // Urban canyon: two building faces with a sky gap between them.
            facing_wall(1, [9.5, 12.0], [-15.25, -4.4, 22.0], 42, [0.52, 0.5, 0.47]),
            // The sign returns no LiDAR energy; only image evidence sees it.
            // It floats in the gap, so nothing renders behind it, and it
            // drifts from the front camera into the left camera as the rig
            // advances: recovery needs cross-camera, cross-frame views.
            PrimitiveSpec {
                id: 2,
                shape: PrimitiveShape::Plane { size: [5.2, 3.4] },
                pose: yaw_pose(std::f64::consts::PI, [-3.3, -3.4, 13.0]),
                texture_seed: 43,
                albedo: [0.8, 0.55, 0.2],
                track: None,
                lidar_visible: false,
            },
            facing_wall(3, [20.5, 12.0], [9.75, -4.4, 22.0], 44, [0.45, 0.52, 0.58]),
        ],
        lidar: LidarSpec {
            rings: 50,
            rays_per_ring: 100,
            elevation_min_deg: -25.0,
            elevation_max_deg: 36.0,
            azimuth_min_deg: -60.0,
            azimuth_max_deg: 60.0,
            max_range: 60.0,
        },
        sfm: Some(SfmSpec {
            samples_per_instance: 260,
            max_views: 4,
        }),
        priors: Some(PriorSpec {
            voxel_size: 0.25,
            neighbor_k: 4,
            sources: vec!["lidar".into()],
            exclude_instances: vec![],
            scale_cap: Some(0.35),
            min_thickness: Some(0.12),
        }),
    }
}

pub fn by_name(name: &str) -> Option<SceneSpec> {
    match name {
        "planar_street" => Some(planar_street()),
        "occluded_sign" => Some(occluded_sign()),
        "moving_box" => Some(moving_box()),
        "sparse_lidar_holes" => Some(sparse_lidar_holes()),
        _ => None,
    }
}

pub const NAMES: [&str; 4] = [
    "planar_street",
    "occluded_sign",
    "moving_box",
    "sparse_lidar_holes",
];
