/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_playground_free: (a: number, b: number) => void;
export const playground_crop: (a: number, b: number, c: number) => [number, number];
export const playground_new: (a: bigint) => [number, number, number];
export const playground_next_scene: (a: number) => [number, number];
export const playground_train: (a: number, b: number) => [number, number, number];
export const playground_view_json: (a: number) => [number, number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_start: () => void;
