//! Directions, rotations, and first-order Ambisonics (FOA) channel math.
//!
//! Conventions used throughout the crate:
//!
//! * Cartesian frame: x front, y left, z up. Azimuth is measured from +x
//!   toward +y in [-180, 180] degrees, elevation from the horizontal plane
//!   toward +z in [-90, 90] degrees.
//! * FOA channels are ACN-ordered `[W, Y, Z, X]` with SN3D gains: a plane
//!   wave `s` from unit direction `(x, y, z)` encodes as `W = s`,
//!   `Y = s*y`, `Z = s*z`, `X = s*x`.
//!
//! Because the dipole channels are exactly the direction cosines, rotating a
//! sound field is a per-sample 3x3 transform of `(X, Y, Z)` with `W` left
//! untouched, and it commutes with encoding: `rotate(encode(s, d)) ==
//! encode(s, R d)` up to rounding.

use crate::error::{Error, Result};

/// Plain 3-vector. Unconstrained, unlike [`Doa`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn scale(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }

    #[inline]
    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    #[inline]
    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    /// Normalize to a canonical unit vector: one whose *computed* norm is
    /// exactly 1.0, so that dividing it by its norm is a bitwise no-op.
    ///
    /// A bare `v / ||v||` lands within an ulp or two of unit length but its
    /// recomputed norm need not round to 1.0 (iterating the map can even
    /// drift forever at ulp scale). After the division this nudges the
    /// largest-magnitude component by whole ulps until the norm computes to
    /// 1.0. One ulp there moves the squared norm by at most 2^-52 while the
    /// window that makes `sqrt` round to 1.0 is 1.5 * 2^-52 wide, so the
    /// scan always hits. The direction moves by under 1e-13 degrees, and the
    /// label codec becomes exactly invertible.
    pub fn normalize_canonical(self) -> Result<Vec3> {
        if !self.is_finite() {
            return Err(Error::DegenerateDirection(format!("non-finite {self:?}")));
        }
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::DegenerateDirection("zero vector".into()));
        }
        let w = Vec3::new(self.x / n, self.y / n, self.z / n);
        if w.norm() == 1.0 {
            return Ok(w);
        }
        let idx = {
            let a = [w.x.abs(), w.y.abs(), w.z.abs()];
            if a[0] >= a[1] && a[0] >= a[2] {
                0
            } else if a[1] >= a[2] {
                1
            } else {
                2
            }
        };
        let get = |v: &Vec3, i: usize| match i {
            0 => v.x,
            1 => v.y,
            _ => v.z,
        };
        let set = |v: &mut Vec3, i: usize, x: f64| match i {
            0 => v.x = x,
            1 => v.y = x,
            _ => v.z = x,
        };
        for k in 1..=64i64 {
            for sign in [1i64, -1] {
                let mut c = w;
                let mut x = get(&c, idx);
                for _ in 0..k {
                    x = if sign > 0 { x.next_up() } else { x.next_down() };
                }
                set(&mut c, idx, x);
                if c.norm() == 1.0 {
                    return Ok(c);
                }
            }
        }
        // Unreachable by the window argument above; keep the best effort.
        debug_assert!(false, "no unit-norm neighbor for {self:?}");
        Ok(w)
    }
}

/// Unit-norm direction of arrival. Construction enforces `||d| - 1| <= 1e-9`
/// and canonicalizes so that renormalizing is a bitwise no-op.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Doa(Vec3);

impl Doa {
    pub fn new(v: Vec3) -> Result<Doa> {
        if (v.norm() - 1.0).abs() > 1e-9 {
            return Err(Error::DegenerateDirection(format!(
                "norm {} is not 1 within 1e-9",
                v.norm()
            )));
        }
        Ok(Doa(v.normalize_canonical()?))
    }

    /// Normalize an arbitrary nonzero vector into a direction.
    pub fn from_vec(v: Vec3) -> Result<Doa> {
        Ok(Doa(v.normalize_canonical()?))
    }

    #[inline]
    pub fn vec(self) -> Vec3 {
        self.0
    }

    pub fn x(self) -> f64 {
        self.0.x
    }
    pub fn y(self) -> f64 {
        self.0.y
    }
    pub fn z(self) -> f64 {
        self.0.z
    }

    /// Azimuth/elevation in degrees. Exact poles report azimuth 0.
    pub fn to_sph(self) -> (f64, f64) {
        // Unit norm rules out the zero vector, so this cannot fail.
        cart_to_sph(self.0).expect("unit vector")
    }
}

/// Convert azimuth/elevation in degrees to a unit direction.
///
/// Errors if azimuth is outside [-180, 180] or elevation outside [-90, 90].
pub fn sph_to_cart(azimuth_deg: f64, elevation_deg: f64) -> Result<Doa> {
    if !(-180.0..=180.0).contains(&azimuth_deg) || !azimuth_deg.is_finite() {
        return Err(Error::AngleRange {
            name: "azimuth_deg",
            value: azimuth_deg,
            min: -180.0,
            max: 180.0,
        });
    }
    if !(-90.0..=90.0).contains(&elevation_deg) || !elevation_deg.is_finite() {
        return Err(Error::AngleRange {
            name: "elevation_deg",
            value: elevation_deg,
            min: -90.0,
            max: 90.0,
        });
    }
    let az = azimuth_deg.to_radians();
    let el = elevation_deg.to_radians();
    let v = Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
    Doa::from_vec(v)
}

/// Convert a nonzero vector to (azimuth, elevation) in degrees.
///
/// At the poles (|z| == ||v||) azimuth is defined as 0.
pub fn cart_to_sph(v: Vec3) -> Result<(f64, f64)> {
    let n = v.norm();
    if n == 0.0 || !v.is_finite() {
        return Err(Error::DegenerateDirection(
            "cannot take angles of a zero or non-finite vector".into(),
        ));
    }
    let el = (v.z / n).clamp(-1.0, 1.0).asin().to_degrees();
    let az = if v.x == 0.0 && v.y == 0.0 {
        0.0
    } else {
        v.y.atan2(v.x).to_degrees()
    };
    Ok((az, el))
}

/// Angle between two directions in degrees, in [0, 180].
///
/// Bitwise-equal inputs return exactly 0; otherwise the dot product is
/// clamped to [-1, 1] before `acos`, so antipodal pairs return exactly 180.
pub fn angular_distance(a: Doa, b: Doa) -> f64 {
    if a == b {
        return 0.0;
    }
    a.vec().dot(b.vec()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// 3x3 orthonormal transform (rotation or rotoreflection), row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    m: [[f64; 3]; 3],
}

impl Rotation {
    pub const IDENTITY: Rotation = Rotation {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validate that `m` is orthonormal within 1e-9 (determinant +1 or -1).
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Rotation> {
        let r = Rotation { m };
        let rt = r.transpose();
        // R * R^T must be the identity.
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k in 0..3 {
                    s += r.m[i][k] * rt.m[k][j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                if (s - want).abs() > 1e-9 {
                    return Err(Error::NotOrthonormal(format!(
                        "(R R^T)[{i}][{j}] = {s}, want {want}"
                    )));
                }
            }
        }
        Ok(r)
    }

    /// Rotation about +z by `deg` (counterclockwise seen from above).
    pub fn about_z(deg: f64) -> Rotation {
        let (s, c) = deg.to_radians().sin_cos();
        Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation from an axis (normalized internally) and an angle in degrees.
    pub fn about_axis(axis: Vec3, deg: f64) -> Result<Rotation> {
        let u = axis.normalize_canonical()?;
        let (s, c) = deg.to_radians().sin_cos();
        let t = 1.0 - c;
        let (x, y, z) = (u.x, u.y, u.z);
        Ok(Rotation {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        })
    }

    #[inline]
    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    /// Transform a direction. Orthonormality preserves unit length, but the
    /// result is re-canonicalized so downstream codecs stay exact.
    pub fn apply_doa(&self, d: Doa) -> Doa {
        Doa::from_vec(self.apply(d.vec())).expect("rotation of a unit vector")
    }

    /// For orthonormal matrices the transpose is the inverse.
    pub fn transpose(&self) -> Rotation {
        let m = self.m;
        Rotation {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn compose(&self, inner: &Rotation) -> Rotation {
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    m[i][j] += self.m[i][k] * inner.m[k][j];
                }
            }
        }
        Rotation { m }
    }

    pub fn det(&self) -> f64 {
        let m = self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }
}

/// Number of FOA channels.
pub const FOA_CHANNELS: usize = 4;

/// ACN channel indices.
pub const CH_W: usize = 0;
pub const CH_Y: usize = 1;
pub const CH_Z: usize = 2;
pub const CH_X: usize = 3;

/// First-order Ambisonics clip: 4 equally long channels in ACN order
/// `[W, Y, Z, X]`, all samples finite.
#[derive(Debug, Clone, PartialEq)]
pub struct FoaClip {
    channels: [Vec<f64>; 4],
    sample_rate: u32,
}

impl FoaClip {
    pub fn new(channels: [Vec<f64>; 4], sample_rate: u32) -> Result<FoaClip> {
        let n = channels[0].len();
        if channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape(format!(
                "channel lengths differ: {:?}",
                channels.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample_rate must be > 0".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if c.iter().any(|s| !s.is_finite()) {
                return Err(Error::Shape(format!("non-finite sample in channel {i}")));
            }
        }
        Ok(FoaClip {
            channels,
            sample_rate,
        })
    }

    pub fn silent(len: usize, sample_rate: u32) -> FoaClip {
        FoaClip {
            channels: std::array::from_fn(|_| vec![0.0; len]),
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<f64>; 4] {
        &self.channels
    }

    /// Sum of squared samples over all channels.
    pub fn energy(&self) -> f64 {
        self.channels
            .iter()
            .map(|c| c.iter().map(|s| s * s).sum::<f64>())
            .sum()
    }

    /// Mix `other` into `self` sample by sample, scaled by `gain`.
    /// `other` may be shorter; it is aligned at `offset` samples.
    pub fn mix_in(&mut self, other: &FoaClip, offset: usize, gain: f64) -> Result<()> {
        if other.sample_rate != self.sample_rate {
            return Err(Error::Shape(format!(
                "sample rate mismatch: {} vs {}",
                other.sample_rate, self.sample_rate
            )));
        }
        let n = self.len();
        for ch in 0..FOA_CHANNELS {
            let dst = &mut self.channels[ch];
            for (i, &s) in other.channels[ch].iter().enumerate() {
                let j = offset + i;
                if j >= n {
                    break;
                }
                dst[j] += gain * s;
            }
        }
        Ok(())
    }
}

/// Encode a mono signal arriving from a (possibly moving) direction into FOA.
///
/// `track` gives the source direction per sample and must match `mono` in
/// length. SN3D gains: `W = s`, and each dipole channel is `s` times the
/// matching direction cosine.
pub fn foa_encode(mono: &[f64], track: &[Doa], sample_rate: u32) -> Result<FoaClip> {
    if mono.len() != track.len() {
        return Err(Error::Shape(format!(
            "mono has {} samples but track has {} directions",
            mono.len(),
            track.len()
        )));
    }
    let n = mono.len();
    let mut w = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n);
    for (s, d) in mono.iter().zip(track) {
        w.push(*s);
        y.push(s * d.y());
        z.push(s * d.z());
        x.push(s * d.x());
    }
    FoaClip::new([w, y, z, x], sample_rate)
}

/// Rotate the sound field of a clip: `W` passes through, and the per-sample
/// vector `(X, Y, Z)` is multiplied by the matrix.
pub fn rotate_foa(clip: &FoaClip, r: &Rotation) -> FoaClip {
    let n = clip.len();
    let mut out = clip.clone();
    for i in 0..n {
        let v = Vec3::new(
            clip.channels[CH_X][i],
            clip.channels[CH_Y][i],
            clip.channels[CH_Z][i],
        );
        let w = r.apply(v);
        out.channels[CH_X][i] = w.x;
        out.channels[CH_Y][i] = w.y;
        out.channels[CH_Z][i] = w.z;
    }
    out
}

/// One entry of the label-exact augmentation catalog: an FOA channel
/// transform paired with the matching direction transform. For first-order
/// material both are the same orthonormal matrix, exposed through
/// [`FoaTransform::apply_clip`] and [`FoaTransform::apply_doa`].
#[derive(Debug, Clone, Copy)]
pub struct FoaTransform {
    rotation: Rotation,
    yaw_quarters: u8,
    mirror: bool,
    flip: bool,
}

impl FoaTransform {
    pub fn rotation(&self) -> &Rotation {
        &self.rotation
    }

    pub fn apply_clip(&self, clip: &FoaClip) -> FoaClip {
        rotate_foa(clip, &self.rotation)
    }

    pub fn apply_doa(&self, d: Doa) -> Doa {
        self.rotation.apply_doa(d)
    }

    pub fn apply_vec(&self, v: Vec3) -> Vec3 {
        self.rotation.apply(v)
    }

    /// Inverse direction transform (transpose: entries are 0/+-1).
    pub fn invert_vec(&self, v: Vec3) -> Vec3 {
        self.rotation.transpose().apply(v)
    }

    pub fn name(&self) -> String {
        format!(
            "yaw{}{}{}",
            self.yaw_quarters as usize * 90,
            if self.mirror { "_mirror" } else { "" },
            if self.flip { "_zflip" } else { "" }
        )
    }

    pub fn is_identity(&self) -> bool {
        self.yaw_quarters == 0 && !self.mirror && !self.flip
    }
}

/// The 16 label-exact sound-field transforms: yaw by k*90 degrees, optional
/// left/right mirror (y -> -y), optional elevation flip (z -> -z). All
/// matrix entries are 0 or +-1, so applying them is exact in floating point.
pub fn rotation_catalog() -> Vec<FoaTransform> {
    let mut out = Vec::with_capacity(16);
    for yaw_quarters in 0u8..4 {
        // Exact quarter-turn entries; sin/cos of 90k degrees would leave
        // 1e-16 residue in the matrix.
        let (s, c) = match yaw_quarters {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
        let yaw = Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        };
        for &mirror in &[false, true] {
            for &flip in &[false, true] {
                let my = if mirror { -1.0 } else { 1.0 };
                let mz = if flip { -1.0 } else { 1.0 };
                let refl = Rotation {
                    m: [[1.0, 0.0, 0.0], [0.0, my, 0.0], [0.0, 0.0, mz]],
                };
                out.push(FoaTransform {
                    rotation: yaw.compose(&refl),
                    yaw_quarters,
                    mirror,
                    flip,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_doa(rng: &mut ChaCha8Rng) -> Doa {
        loop {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if v.norm() > 1e-3 {
                return Doa::from_vec(v).unwrap();
            }
        }
    }

    #[test]
    fn sph_to_cart_axes() {
        let d = sph_to_cart(0.0, 0.0).unwrap();
        assert!((d.x() - 1.0).abs() < 1e-12 && d.y().abs() < 1e-12 && d.z().abs() < 1e-12);
        let d = sph_to_cart(90.0, 0.0).unwrap();
        assert!(d.x().abs() < 1e-12 && (d.y() - 1.0).abs() < 1e-12);
        let d = sph_to_cart(0.0, 90.0).unwrap();
        assert!((d.z() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sph_to_cart_diagonal() {
        let d = sph_to_cart(45.0, 35.264).unwrap();
        let e = 0.577_4_f64;
        assert!((d.x() - e).abs() < 1e-3);
        assert!((d.y() - e).abs() < 1e-3);
        assert!((d.z() - e).abs() < 1e-3);
    }

    #[test]
    fn sph_to_cart_range_errors() {
        assert!(matches!(
            sph_to_cart(200.0, 0.0),
            Err(Error::AngleRange { name: "azimuth_deg", .. })
        ));
        assert!(matches!(
            sph_to_cart(0.0, -91.0),
            Err(Error::AngleRange { name: "elevation_deg", .. })
        ));
        assert!(sph_to_cart(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn cart_sph_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let d = random_doa(&mut rng);
            let (az, el) = d.to_sph();
            assert!((-180.0..=180.0).contains(&az));
            assert!((-90.0..=90.0).contains(&el));
            let (az2, el2) = sph_to_cart(az, el).unwrap().to_sph();
            let mut daz = (az - az2).abs();
            daz = daz.min(360.0 - daz); // wrap at the +-180 seam
            assert!(daz < 1e-9, "azimuth moved {az} -> {az2}");
            assert!((el - el2).abs() < 1e-9, "elevation moved {el} -> {el2}");
        }
    }

    #[test]
    fn cart_to_sph_pole_and_zero() {
        let (az, el) = cart_to_sph(Vec3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(az, 0.0);
        assert!((el - 90.0).abs() < 1e-12);
        assert!(matches!(
            cart_to_sph(Vec3::ZERO),
            Err(Error::DegenerateDirection(_))
        ));
    }

    #[test]
    fn angular_distance_landmarks() {
        let a = sph_to_cart(10.0, 20.0).unwrap();
        assert_eq!(angular_distance(a, a), 0.0);
        let b = Doa::from_vec(a.vec().scale(-1.0)).unwrap();
        assert!((angular_distance(a, b) - 180.0).abs() < 1e-9);
        let x = sph_to_cart(0.0, 0.0).unwrap();
        let z = sph_to_cart(0.0, 90.0).unwrap();
        assert!((angular_distance(x, z) - 90.0).abs() < 1e-9);
    }

    #[test]
    fn doa_rejects_non_unit() {
        assert!(Doa::new(Vec3::new(0.5, 0.0, 0.0)).is_err());
        assert!(Doa::new(Vec3::new(1.0, 0.0, 0.0)).is_ok());
    }

    #[test]
    fn canonical_normalization_is_decode_stable() {
        // The codec contract: dividing a canonical vector by its norm and
        // re-canonicalizing must reproduce it bitwise.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20_000 {
            let v = Vec3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            if v.norm() < 1e-6 {
                continue;
            }
            let u = v.normalize_canonical().unwrap();
            assert_eq!(u.norm(), 1.0, "computed norm must be exactly 1");
            let n = u.norm();
            let divided = Vec3::new(u.x / n, u.y / n, u.z / n);
            let back = divided.normalize_canonical().unwrap();
            assert_eq!(u, back, "decode would move {v:?}");
            // And the direction barely moved: well under the 1e-9 gate.
            let dot = u.dot(Vec3::new(v.x / v.norm(), v.y / v.norm(), v.z / v.norm()));
            assert!(dot > 1.0 - 1e-12);
        }
    }

    #[test]
    fn rotation_validation() {
        let bad = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(Rotation::from_matrix(bad).is_err());
        let r = Rotation::about_z(37.0);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        assert!((r.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_inverse_is_transpose() {
        let r = Rotation::about_axis(Vec3::new(1.0, 2.0, -0.5), 73.0).unwrap();
        let i = r.compose(&r.transpose());
        for a in 0..3 {
            for b in 0..3 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((i.matrix()[a][b] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn foa_encode_gains() {
        let d = sph_to_cart(30.0, -10.0).unwrap();
        let mono = [0.25, -1.0, 0.5];
        let clip = foa_encode(&mono, &[d; 3], 24_000).unwrap();
        for i in 0..3 {
            assert_eq!(clip.channel(CH_W)[i], mono[i]);
            assert!((clip.channel(CH_X)[i] - mono[i] * d.x()).abs() < 1e-15);
            assert!((clip.channel(CH_Y)[i] - mono[i] * d.y()).abs() < 1e-15);
            assert!((clip.channel(CH_Z)[i] - mono[i] * d.z()).abs() < 1e-15);
        }
    }

    #[test]
    fn foa_encode_length_mismatch() {
        let d = sph_to_cart(0.0, 0.0).unwrap();
        assert!(foa_encode(&[0.0; 4], &[d; 3], 24_000).is_err());
    }

    #[test]
    fn rotate_foa_leaves_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mono: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let d = random_doa(&mut rng);
        let clip = foa_encode(&mono, &vec![d; 64], 24_000).unwrap();
        let r = Rotation::about_axis(Vec3::new(0.3, -1.0, 2.0), 51.0).unwrap();
        let rot = rotate_foa(&clip, &r);
        assert_eq!(rot.channel(CH_W), clip.channel(CH_W));
    }

    #[test]
    fn rotation_commutes_with_encoding() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mono: Vec<f64> = (0..128).map(|_| rng.random_range(-1.0..1.0)).collect();
        for _ in 0..20 {
            let d = random_doa(&mut rng);
            let r = Rotation::about_axis(
                Vec3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
                rng.random_range(-180.0..180.0),
            )
            .unwrap();
            let rotated_clip = rotate_foa(&foa_encode(&mono, &vec![d; 128], 24_000).unwrap(), &r);
            let rd = Doa::from_vec(r.apply(d.vec())).unwrap();
            let direct = foa_encode(&mono, &vec![rd; 128], 24_000).unwrap();
            for ch in 0..FOA_CHANNELS {
                for i in 0..128 {
                    assert!(
                        (rotated_clip.channel(ch)[i] - direct.channel(ch)[i]).abs() < 1e-9,
                        "channel {ch} sample {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn catalog_is_16_distinct_orthonormal_transforms() {
        let cat = rotation_catalog();
        assert_eq!(cat.len(), 16);
        for t in &cat {
            Rotation::from_matrix(*t.rotation().matrix()).unwrap();
            let det = t.rotation().det();
            assert!((det.abs() - 1.0).abs() < 1e-12, "{}: det {det}", t.name());
            // Entries are exact 0/+-1, so repeated application stays exact.
            for row in t.rotation().matrix() {
                for &e in row {
                    assert!(e == 0.0 || e == 1.0 || e == -1.0);
                }
            }
        }
        for i in 0..16 {
            for j in i + 1..16 {
                assert_ne!(
                    cat[i].rotation().matrix(),
                    cat[j].rotation().matrix(),
                    "{} duplicates {}",
                    cat[i].name(),
                    cat[j].name()
                );
            }
        }
        assert!(cat.iter().filter(|t| t.is_identity()).count() == 1);
    }

    #[test]
    fn catalog_label_transform_matches_field_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mono: Vec<f64> = (0..96).map(|_| rng.random_range(-1.0..1.0)).collect();
        for t in rotation_catalog() {
            let d = random_doa(&mut rng);
            let lhs = t.apply_clip(&foa_encode(&mono, &vec![d; 96], 24_000).unwrap());
            let rhs = foa_encode(&mono, &vec![t.apply_doa(d); 96], 24_000).unwrap();
            for ch in 0..FOA_CHANNELS {
                for i in 0..96 {
                    assert!((lhs.channel(ch)[i] - rhs.channel(ch)[i]).abs() < 1e-9);
                }
            }
        }
    }
}
