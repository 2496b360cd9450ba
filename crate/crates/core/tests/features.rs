use metamer_core::features::manifest::{relu4_1_decoder_layers, vgg19_relu4_1_layers};
use metamer_core::features::toy::{block_codec, orthonormal_codec, procedural_image, random_weights};
use metamer_core::features::{decode, encode, load_weights, FeatureTensor, ImageBuffer, ShapeSpec};
use metamer_core::{Error, ExecPolicy};

#[test]
fn vgg_layout_maps_512_to_64() {
    let enc = random_weights("e", ShapeSpec::channels(3), ShapeSpec::channels(512), vgg19_relu4_1_layers(), 1).unwrap();
    assert_eq!(enc.output_shape((3, 512, 512)).unwrap(), (512, 64, 64));
    let dec = random_weights("d", ShapeSpec::channels(512), ShapeSpec::channels(3), relu4_1_decoder_layers(), 2).unwrap();
    assert_eq!(dec.output_shape((512, 64, 64)).unwrap(), (3, 512, 512));
}

#[test]
fn random_vgg_pair_runs_and_is_deterministic() {
    let enc = random_weights("e", ShapeSpec::channels(3), ShapeSpec::channels(512), vgg19_relu4_1_layers(), 1).unwrap();
    let dec = random_weights("d", ShapeSpec::channels(512), ShapeSpec::channels(3), relu4_1_decoder_layers(), 2).unwrap();
    let img = procedural_image(3, 64, 3);
    let a = encode(&img, &enc, ExecPolicy::Parallel).unwrap();
    let b = encode(&img, &enc, ExecPolicy::Sequential).unwrap();
    assert_eq!(a.shape(), (512, 8, 8));
    assert_eq!(a.data, b.data);
    let out = decode(&a, &dec, ExecPolicy::Parallel).unwrap();
    assert_eq!((out.channels, out.height, out.width), (3, 64, 64));
    assert!(out.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn orthonormal_pair_inverts() {
    let (enc, dec) = orthonormal_codec(3, 12, 5).unwrap();
    for seed in 0..4 {
        let img = procedural_image(3, 48, seed);
        let back = decode(&encode(&img, &enc, ExecPolicy::Parallel).unwrap(), &dec, ExecPolicy::Parallel).unwrap();
        let err = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn zero_in_zero_out() {
    let (enc, dec) = orthonormal_codec(3, 8, 1).unwrap();
    let f = encode(&ImageBuffer::new(3, 32, 32), &enc, ExecPolicy::Parallel).unwrap();
    assert!(f.data.iter().all(|&v| v == 0.0));
    let img = decode(&FeatureTensor::zeros(8, 32, 32), &dec, ExecPolicy::Parallel).unwrap();
    assert!(img.data.iter().all(|&v| v == 0.0));
}

#[test]
fn block_codec_changes_resolution() {
    let (enc, dec) = block_codec(3, 4).unwrap();
    let img = procedural_image(3, 64, 2);
    let f = encode(&img, &enc, ExecPolicy::Parallel).unwrap();
    assert_eq!((f.height, f.width), (16, 16));
    let back = decode(&f, &dec, ExecPolicy::Parallel).unwrap();
    assert_eq!((back.height, back.width), (64, 64));
}

#[test]
fn shape_mismatch_is_an_error() {
    let (enc, dec) = orthonormal_codec(3, 8, 1).unwrap();
    assert!(encode(&ImageBuffer::new(1, 16, 16), &enc, ExecPolicy::Parallel).is_err());
    assert!(decode(&FeatureTensor::zeros(5, 16, 16), &dec, ExecPolicy::Parallel).is_err());
}

#[test]
fn manifests_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let enc = random_weights("e", ShapeSpec::channels(3), ShapeSpec::channels(512), vgg19_relu4_1_layers(), 9).unwrap();
    enc.save(dir.path()).unwrap();
    let loaded = load_weights(dir.path()).unwrap();
    assert_eq!(loaded.checksum, enc.checksum);
    let img = procedural_image(3, 32, 1);
    assert_eq!(
        encode(&img, &loaded, ExecPolicy::Parallel).unwrap().data,
        encode(&img, &enc, ExecPolicy::Parallel).unwrap().data
    );
}

#[test]
fn tampered_blob_fails_the_checksum() {
    let dir = tempfile::tempdir().unwrap();
    let (enc, _) = orthonormal_codec(3, 8, 1).unwrap();
    enc.save(dir.path()).unwrap();
    let blob = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e != "json"))
        .unwrap();
    let mut bytes = std::fs::read(&blob).unwrap();
    bytes[0] ^= 0x40;
    std::fs::write(&blob, bytes).unwrap();
    assert!(matches!(load_weights(dir.path()), Err(Error::Checksum { .. })));
}

#[test]
fn truncated_blob_is_a_size_error() {
    let dir = tempfile::tempdir().unwrap();
    let (enc, _) = orthonormal_codec(3, 8, 1).unwrap();
    enc.save(dir.path()).unwrap();
    let blob = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e != "json"))
        .unwrap();
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 6]).unwrap();
    assert!(matches!(load_weights(dir.path()), Err(Error::BlobSize { .. })));
}
