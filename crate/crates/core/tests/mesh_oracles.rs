use anatomask::mesh::{gaussian_smooth, laplacian_smooth, marching_cubes, mesh_measures, taubin_smooth, TriMesh};
use anatomask::phantom::{generate, PhantomSpec};
use anatomask::volume::{Volume3D, VolumeKind};

fn sphere_mesh(r: f64) -> TriMesh {
    let n = (2.0 * r) as usize + 8;
    let c = (n as f64 - 1.0) / 2.0;
    let mut data = vec![0.0; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
                data[x + n * (y + n * z)] = (d <= r) as u8 as f64;
            }
        }
    }
    let v = Volume3D::new([n; 3], [1.0; 3], [0.0; 3], data, VolumeKind::BinaryMask).unwrap();
    marching_cubes(&gaussian_smooth(&v, 1.0).unwrap(), 0.5)
}

#[test]
fn taubin_preserves_volume_laplacian_shrinks() {
    let m = sphere_mesh(12.0);
    let v0 = mesh_measures(&m).unwrap().volume;
    let lap = laplacian_smooth(&m, 10, 0.5).unwrap();
    let tau = taubin_smooth(&m, 10, 0.5, -0.53).unwrap();
    assert_eq!(lap.triangles, m.triangles);
    assert_eq!(tau.triangles, m.triangles);
    let vl = mesh_measures(&lap).unwrap().volume;
    let vt = mesh_measures(&tau).unwrap().volume;
    assert!(vl < v0, "laplacian did not shrink");
    assert!((vt - v0).abs() / v0 < 0.01, "taubin drift {}", (vt - v0) / v0);
    assert!((v0 - vl) > (vt - v0).abs());
}

#[test]
fn phantom_surface_matches_analytic_record() {
    for spec in [PhantomSpec::default(), PhantomSpec::patient(3, 7)] {
        let p = generate(&spec).unwrap();
        let m = marching_cubes(&gaussian_smooth(&p.gt_mask, 1.0).unwrap(), 0.5).largest_component();
        assert!(m.is_watertight());
        let meas = mesh_measures(&m).unwrap();
        let a = &p.analytic;
        let da = (meas.surface_area - a.surface_area_mm2).abs() / a.surface_area_mm2;
        let dv = (meas.volume - a.volume_mm3).abs() / a.volume_mm3;
        assert!(da < 0.03, "area rel err {da}");
        assert!(dv < 0.03, "volume rel err {dv}");
        let voxel = p.gt_mask.count_nonzero() as f64 * p.gt_mask.voxel_volume();
        assert!((meas.volume - voxel).abs() / voxel < 0.02);
    }
}
