//! Mask and box primitives shared by proposal filtering and class-wise suppression.

mod bbox;
mod mask;
mod nms;

pub use bbox::{box_iou, BoundingBox};
pub use mask::{mask_iou, mask_to_bbox, rle_decode, rle_encode, BinaryMask, Bitmap, MaskProposal};
pub use nms::{nms, nms_with};
