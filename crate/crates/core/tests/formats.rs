//! File formats: round trips and the two stack encodings agreeing.

use mtt_core::io::*;
use mtt_core::metrics::theta_values;
use mtt_core::model::{DynamicsParams, Geometry, ImageStack, ModelParams, TargetState, Track};
use mtt_core::Error;
use proptest::prelude::*;

fn stack() -> impl Strategy<Value = ImageStack> {
    (1usize..4, 1usize..6, 1usize..6).prop_flat_map(|(n, r, c)| {
        prop::collection::vec(-1e6f32..1e6f32, n * r * c)
            .prop_map(move |v| ImageStack::new(n, r, c, v.into_iter().map(f64::from).collect()).unwrap())
    })
}

fn track(frames: usize) -> impl Strategy<Value = Track> {
    (0..frames).prop_flat_map(move |birth| {
        prop::collection::vec(prop::array::uniform5(-100.0..100.0f64), 1..=frames - birth).prop_map(move |xs| {
            Track::new(birth, xs.into_iter().map(|x| TargetState::new(x[0], [x[1], x[2]], [x[3], x[4]])).collect())
        })
    })
}

proptest! {
    #[test]
    fn mts_and_frame_dir_agree(y in stack()) {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("y.mts");
        write_mts(&file, &y).unwrap();
        write_frame_dir(&dir.path().join("frames"), &y).unwrap();
        let a = read_stack(&file).unwrap();
        let b = read_stack(&dir.path().join("frames")).unwrap();
        prop_assert_eq!(&a, &y);
        prop_assert_eq!(&b, &y);
    }

    #[test]
    fn truncated_streams_are_errors(y in stack(), cut in 0.0..1.0f64) {
        let bytes = encode_mts(&y);
        let keep = (cut * bytes.len() as f64) as usize;
        let err = decode_mts(&bytes[..keep]).unwrap_err();
        prop_assert!(matches!(err, Error::BadMagic | Error::Truncated { .. }), "{:?}", err);
    }

    #[test]
    fn tracks_round_trip(samples in prop::collection::vec(prop::collection::vec(track(6), 0..4), 1..4)) {
        let mut buf = Vec::new();
        {
            let mut w = TracksWriter::new(&mut buf).unwrap();
            for (i, s) in samples.iter().enumerate() {
                w.write(i, s).unwrap();
            }
            w.flush().unwrap();
        }
        let text = String::from_utf8(buf.clone()).unwrap();
        prop_assert!(text.starts_with("sample,track,frame,a,sx,sy,vx,vy"));
        let back = read_tracks(&buf[..]).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let got = back.get(&i).cloned().unwrap_or_default();
            prop_assert_eq!(&got, s);
        }
    }
}

#[test]
fn files_number_frames_from_one() {
    let y = ImageStack::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_frame_dir(dir.path(), &y).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("frame_0002.csv")).unwrap().trim(), "3,4");
    assert!(!dir.path().join("frame_0000.csv").exists());

    let mut buf = Vec::new();
    let mut w = TracksWriter::new(&mut buf).unwrap();
    w.write(0, &[Track::new(1, vec![TargetState::new(5.0, [1.0, 2.0], [0.0, 0.0])])]).unwrap();
    w.flush().unwrap();
    drop(w);
    let line = String::from_utf8(buf).unwrap().lines().nth(1).unwrap().to_string();
    assert!(line.starts_with("0,1,2,"), "{line}");
}

#[test]
fn params_round_trip() {
    let p = ModelParams::uniform(
        DynamicsParams::from_array([30.0, 0.1, -0.2, 4.0, 25.0, 3.0, 0.5, 0.3, 0.7]),
        0.95,
        0.25,
        1.5,
        0.8,
        3,
        Geometry::new(4, 4, 1.0, 1.0, 5),
        1.0,
    );
    let mut buf = Vec::new();
    {
        let mut w = ParamsWriter::new(&mut buf, 3).unwrap();
        w.write(0, &p).unwrap();
        w.write(1, &p).unwrap();
        w.flush().unwrap();
    }
    let (header, rows) = read_params(&buf[..]).unwrap();
    assert_eq!(header.len(), 1 + theta_values(&p).len());
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[1][1..], &theta_values(&p)[..]);
}
