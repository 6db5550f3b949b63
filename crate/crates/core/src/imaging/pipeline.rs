use super::{
    detect_boundary, encode_fsq1, sharpen_boundary, to_monochrome, CompressedDoc, Image, ImagingError, PipelineConfig,
};

/// Byte sizes after each pipeline stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StageReport {
    pub input_bytes: usize,
    pub monochrome_bytes: usize,
    pub boundary_pixels: usize,
    pub sharpened_bytes: usize,
    pub container_bytes: usize,
}

/// Monochrome, detect boundary, sharpen boundary, compress.
pub fn process_document(img: &Image, cfg: &PipelineConfig) -> Result<CompressedDoc, ImagingError> {
    process_document_with_report(img, cfg).map(|(doc, _)| doc)
}

pub fn process_document_with_report(
    img: &Image,
    cfg: &PipelineConfig,
) -> Result<(CompressedDoc, StageReport), ImagingError> {
    cfg.validate()?;
    let mono = to_monochrome(img);
    let mask = detect_boundary(&mono, cfg.edge_k)?;
    let sharp = sharpen_boundary(&mono, &mask, cfg.sharpen_alpha)?;
    let doc = encode_fsq1(&sharp, cfg.quality)?;
    let report = StageReport {
        input_bytes: img.samples().len(),
        monochrome_bytes: mono.samples().len(),
        boundary_pixels: mask.count(),
        sharpened_bytes: sharp.samples().len(),
        container_bytes: doc.len(),
    };
    Ok((doc, report))
}
