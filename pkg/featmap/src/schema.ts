/**
 * Shared response-map file schema (see docs/response-map.md in the repo
 * root). The keypoint extraction pipeline reads exactly this shape.
 */

import { z } from "zod";

export const responseMapSchema = z
  .object({
    h: z.number().int().min(1),
    w: z.number().int().min(1),
    values: z.array(z.number().min(0).max(1)),
    points: z.array(z.union([z.tuple([z.number(), z.number(), z.number()]), z.null()])),
    meta: z.object({
      text: z.string(),
      image: z.string(),
      model: z.string(),
      similarity: z.string(),
      raw_min: z.number(),
      raw_max: z.number(),
    }),
  })
  .refine((doc) => doc.values.length === doc.h * doc.w, {
    message: "values must hold h*w entries",
  })
  .refine((doc) => doc.points.length === doc.h * doc.w, {
    message: "points must hold h*w entries",
  });

export type ResponseMapFile = z.infer<typeof responseMapSchema>;

export const pointsFileSchema = z
  .object({
    h: z.number().int().min(1),
    w: z.number().int().min(1),
    points: z.array(z.union([z.tuple([z.number(), z.number(), z.number()]), z.null()])),
  })
  .refine((doc) => doc.points.length === doc.h * doc.w, {
    message: "points must hold h*w entries",
  });

export type PointsFile = z.infer<typeof pointsFileSchema>;
