mod common;

use common::{images, small_masks, toy_codec};
use metamer_core::features::{decode, encode};
use metamer_core::iqa::ssim;
use metamer_core::optimization::GammaFunction;
use metamer_core::styletransfer::{image_checksum, synthesize_metamer, AlphaField, AlphaSource, Codec};
use metamer_core::ExecPolicy;

const SIZE: usize = 128;

#[test]
fn fixed_seed_is_bit_identical_across_policies() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.5, SIZE);
    let (_, img) = &images(1, SIZE)[0];
    let g = GammaFunction::new(1.0);
    let a = synthesize_metamer(img, 42, AlphaSource::Gamma(&g), &masks, &codec, ExecPolicy::Parallel).unwrap();
    let b = synthesize_metamer(img, 42, AlphaSource::Gamma(&g), &masks, &codec, ExecPolicy::Sequential).unwrap();
    assert_eq!(a.image.data, b.image.data);
    assert_eq!(a.metadata, b.metadata);
    let c = synthesize_metamer(img, 43, AlphaSource::Gamma(&g), &masks, &codec, ExecPolicy::Parallel).unwrap();
    assert_ne!(a.image.data, c.image.data);
}

#[test]
fn zero_alpha_matches_round_trip_on_every_image() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.4, SIZE);
    for (id, img) in images(5, SIZE) {
        let zero = AlphaField::zeros(masks.len());
        let m = synthesize_metamer(&img, 1, AlphaSource::Field(&zero), &masks, &codec, ExecPolicy::Parallel).unwrap();
        let rt = decode(&encode(&img, &enc, ExecPolicy::Parallel).unwrap(), &dec, ExecPolicy::Parallel).unwrap();
        assert_eq!(m.image.data, rt.data, "{id}");
        let err = img.data.iter().zip(&rt.data).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
        assert!(err < 1e-6, "{id}: {err}");
    }
}

#[test]
fn departure_grows_with_uniform_alpha() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.5, SIZE);
    for (id, img) in images(3, SIZE) {
        let render = |a: f64| {
            let field = AlphaField::uniform(&masks, a).unwrap();
            synthesize_metamer(&img, 3, AlphaSource::Field(&field), &masks, &codec, ExecPolicy::Parallel)
                .unwrap()
                .image
        };
        let base = render(0.0);
        let s: Vec<f64> = [0.0, 0.25, 0.5, 0.75].iter().map(|&a| ssim(&render(a), &base).unwrap()).collect();
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert!(s.windows(2).all(|p| p[1] <= p[0] + 1e-12), "{id}: {s:?}");
    }
}

#[test]
fn pixels_owned_by_the_fovea_are_preserved() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.5, SIZE);
    let (_, img) = &images(1, SIZE)[0];
    let zero = AlphaField::zeros(masks.len());
    let field = AlphaField::uniform(&masks, 0.9).unwrap();
    let a = synthesize_metamer(img, 5, AlphaSource::Field(&zero), &masks, &codec, ExecPolicy::Parallel).unwrap();
    let b = synthesize_metamer(img, 5, AlphaSource::Field(&field), &masks, &codec, ExecPolicy::Parallel).unwrap();
    let fovea = &masks.masks[0];
    let plane = SIZE * SIZE;
    let (mut diff, mut norm) = (0.0f64, 0.0f64);
    for (x, y, w) in fovea.iter() {
        // pixels owned by the fovea alone
        if w < 1.0 {
            continue;
        }
        for c in 0..img.channels {
            let i = c * plane + y * SIZE + x;
            diff += (a.image.data[i] - b.image.data[i]).powi(2) as f64;
            norm += (a.image.data[i] as f64).powi(2);
        }
    }
    assert!(norm > 0.0);
    assert!(diff.sqrt() < 1e-6 * norm.sqrt(), "{} vs {}", diff.sqrt(), norm.sqrt());
}

#[test]
fn metadata_records_provenance() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.6, SIZE);
    let (_, img) = &images(1, SIZE)[0];
    let g = GammaFunction::new(1.281);
    let m = synthesize_metamer(img, 77, AlphaSource::Gamma(&g), &masks, &codec, ExecPolicy::Parallel).unwrap();
    let md = &m.metadata;
    assert_eq!(md.seed, 77);
    assert_eq!(md.scale, 0.6);
    assert_eq!(md.image_size, SIZE);
    assert_eq!(md.regions, masks.len());
    assert_eq!(md.gamma.as_ref(), Some(&g));
    assert_eq!(md.encoder_checksum, enc.checksum);
    assert_eq!(md.decoder_checksum, dec.checksum);
    assert_eq!(md.output_checksum, image_checksum(&m.image));
    assert!(md.max_alpha > 0.0 && md.max_alpha < 1.0);
    let json = serde_json::to_string(md).unwrap();
    assert_eq!(&serde_json::from_str::<metamer_core::styletransfer::MetamerMetadata>(&json).unwrap(), md);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let (enc, dec) = toy_codec();
    let codec = Codec::new(&enc, &dec);
    let masks = small_masks(0.5, SIZE);
    let (_, img) = &images(1, 96)[0];
    let zero = AlphaField::zeros(masks.len());
    assert!(synthesize_metamer(img, 1, AlphaSource::Field(&zero), &masks, &codec, ExecPolicy::Parallel).is_err());
    let (_, img) = &images(1, SIZE)[0];
    let short = AlphaField::zeros(3);
    assert!(synthesize_metamer(img, 1, AlphaSource::Field(&short), &masks, &codec, ExecPolicy::Parallel).is_err());
    assert!(AlphaField::new(vec![0.5, 0.1]).is_err());
    assert!(AlphaField::new(vec![0.0, 1.0]).is_err());
}
