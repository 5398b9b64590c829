//! CPU renderer: volume ray marching, splat compositing, mesh raycasting,
//! marching cubes, TSDF fusion, shading, texture backprojection, and image
//! export.

pub mod camera;
pub mod io;
pub mod mc;
pub mod mesh;
pub mod normals;
pub mod shade;
pub mod splat;
pub mod texture;
pub mod tsdf;
pub mod types;
pub mod vec3;
pub mod volume;

pub use camera::{camera_ring, Camera};
pub use mc::{marching_cubes, marching_cubes_field};
pub use mesh::{MeshHit, MeshRaycaster};
pub use normals::{normals_from_depth, normals_from_depth_bwd};
pub use splat::{composite_splats, SplatOptions};
pub use texture::backproject_texture;
pub use tsdf::tsdf_fuse;
pub use types::{Aabb, RenderOutput, SplatSet, TextureImage, TriMesh, VolumeGrid};
pub use volume::{raymarch_volume, RaymarchOptions};
